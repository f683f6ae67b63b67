#include "dronecam/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace dronecam::geo {
namespace {

void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite component");
}

}  // namespace

CameraPose::CameraPose(const Vec3& p, const Quat& q) : position(p), orientation(quat_normalize(q)) {
  require_finite(p, "CameraPose");
}

Quat quat_normalize(const Quat& q) {
  require_finite(q, "quat_normalize");
  const double n = q.norm();
  if (n < 1e-12) throw std::invalid_argument("quat_normalize: near-zero quaternion");
  return quat_canonical(q / n);
}

Quat quat_canonical(const Quat& q) {
  for (int i = 0; i < 4; ++i) {
    if (q[i] > 0) return q;
    if (q[i] < 0) return -q;
  }
  return q;
}

Quat quat_compose(const Quat& a, const Quat& b) {
  Quat r;
  r[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
  r[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
  r[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
  r[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
  return quat_normalize(r);
}

Quat quat_inverse(const Quat& q) {
  const Quat n = quat_normalize(q);
  return quat_canonical(Quat(n[0], -n[1], -n[2], -n[3]));
}

Mat3 quat_to_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quat matrix_to_quat(const Mat3& r) {
  const double tr = r.trace();
  Quat q;
  if (tr > 0) {
    const double s = 2 * std::sqrt(1 + tr);
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2 * std::sqrt(1 + r(0, 0) - r(1, 1) - r(2, 2));
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2 * std::sqrt(1 + r(1, 1) - r(0, 0) - r(2, 2));
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2 * std::sqrt(1 + r(2, 2) - r(0, 0) - r(1, 1));
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  return quat_normalize(q);
}

Vec3 quat_rotate(const Quat& q, const Vec3& v) {
  // v + 2 u x (u x v + w v)
  const Vec3 u(q[1], q[2], q[3]);
  const Vec3 t = 2.0 * u.cross(v);
  return v + q[0] * t + u.cross(t);
}

Quat exp_map(const Vec3& w) {
  require_finite(w, "exp_map");
  const double th = w.norm();
  const double half = 0.5 * th;
  const double k = th < 1e-4 ? 0.5 - th * th / 48.0 : std::sin(half) / th;
  return quat_normalize(Quat(std::cos(half), k * w[0], k * w[1], k * w[2]));
}

Vec3 log_map(const Quat& q) {
  Quat c = quat_normalize(q);
  if (c[0] < 0) c = -c;
  const Vec3 v(c[1], c[2], c[3]);
  const double n = v.norm();
  const double w = c[0];
  double k;
  if (n < 1e-6 && w > 0) {
    // 2 atan(n / w) / n
    const double r2 = (n / w) * (n / w);
    k = (2.0 / w) * (1.0 - r2 / 3.0 + r2 * r2 / 5.0);
  } else {
    k = 2.0 * std::atan2(n, w) / n;
  }
  return k * v;
}

double quat_distance(const Quat& a, const Quat& b) {
  return std::min((a - b).norm(), (a + b).norm());
}

CameraPose compose(const CameraPose& a, const CameraPose& b) {
  return {a.position + quat_rotate(a.orientation, b.position), quat_compose(a.orientation, b.orientation)};
}

CameraPose inverse(const CameraPose& a) {
  const Quat qi = quat_inverse(a.orientation);
  return {-quat_rotate(qi, a.position), qi};
}

CameraPose relative(const CameraPose& a, const CameraPose& b) {
  const Quat qi = quat_inverse(a.orientation);
  return {quat_rotate(qi, b.position - a.position), quat_compose(qi, b.orientation)};
}

CameraMotion relative_motion(const CameraPose& a, const CameraPose& b, double dt) {
  if (!(dt > 0) || !std::isfinite(dt)) throw std::invalid_argument("relative_motion: dt must be positive");
  require_finite(a.position, "relative_motion");
  require_finite(b.position, "relative_motion");
  CameraMotion m;
  const Quat qi = quat_inverse(a.orientation);
  m.linear = quat_rotate(qi, b.position - a.position) / dt;
  m.angular = log_map(quat_compose(qi, b.orientation)) / dt;
  return m;
}

CameraPose integrate_motion(const CameraPose& pose, const CameraMotion& m, double dt) {
  if (!(dt > 0) || !std::isfinite(dt)) throw std::invalid_argument("integrate_motion: dt must be positive");
  require_finite(m.linear, "integrate_motion");
  require_finite(m.angular, "integrate_motion");
  require_finite(pose.position, "integrate_motion");
  return {pose.position + quat_rotate(pose.orientation, m.linear * dt),
          quat_compose(pose.orientation, exp_map(m.angular * dt))};
}

Quat look_rotation(const Vec3& forward, const Vec3& up) {
  const Vec3 f = forward.normalized();
  Vec3 right = f.cross(up);
  if (right.norm() < 1e-9) throw std::invalid_argument("look_rotation: forward parallel to up");
  right.normalize();
  const Vec3 down = f.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = f;
  return matrix_to_quat(r);
}

}  // namespace dronecam::geo
