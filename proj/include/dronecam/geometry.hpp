#pragma once

#include <Eigen/Dense>

// Pose and motion arithmetic. Quaternions are Hamilton, stored (w, x, y, z).
// Camera axes: +z forward (optical axis), +x right, +y down.
namespace dronecam::geo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Vector4d;  // (w, x, y, z)

struct CameraPose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat(1, 0, 0, 0);

  CameraPose() = default;
  // Normalizes and canonicalizes q. Throws on non-finite input or zero norm.
  CameraPose(const Vec3& p, const Quat& q);

  static CameraPose identity() { return {}; }
};

struct CameraMotion {
  Vec3 linear = Vec3::Zero();   // world units / s, local frame
  Vec3 angular = Vec3::Zero();  // rad / s, local frame
};

Quat quat_normalize(const Quat& q);
// w >= 0; if w == 0 the first nonzero component is positive.
Quat quat_canonical(const Quat& q);
Quat quat_compose(const Quat& a, const Quat& b);
Quat quat_inverse(const Quat& q);
Mat3 quat_to_matrix(const Quat& q);
Quat matrix_to_quat(const Mat3& r);
Vec3 quat_rotate(const Quat& q, const Vec3& v);
Quat exp_map(const Vec3& w);
// Shortest-arc rotation vector.
Vec3 log_map(const Quat& q);
double quat_distance(const Quat& a, const Quat& b);

CameraPose compose(const CameraPose& a, const CameraPose& b);
CameraPose inverse(const CameraPose& a);
// Expresses b in the frame of a: inverse(a) * b.
CameraPose relative(const CameraPose& a, const CameraPose& b);

CameraMotion relative_motion(const CameraPose& a, const CameraPose& b, double dt);
CameraPose integrate_motion(const CameraPose& pose, const CameraMotion& m, double dt);

// Orientation whose +z axis points along `forward`, with +y as close to -up as
// possible. forward must not be parallel to up.
Quat look_rotation(const Vec3& forward, const Vec3& up = Vec3::UnitZ());

}  // namespace dronecam::geo
