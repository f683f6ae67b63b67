#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dronecam/geometry.hpp"
#include "oracles.hpp"

using namespace dronecam::geo;

namespace {

TEST(Geometry, PureTranslationInIdentityFrame) {
  const CameraPose a, b(Vec3(1, 0, 0), Quat(1, 0, 0, 0));
  const auto m = relative_motion(a, b, 1.0);
  EXPECT_NEAR((m.linear - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
  EXPECT_EQ(m.angular.norm(), 0.0);
}

TEST(Geometry, NoMotionBetweenEqualPoses) {
  std::mt19937_64 rng(1);
  const CameraPose p = oracle::random_pose(rng);
  const auto m = relative_motion(p, p, 1.0 / 15);
  EXPECT_EQ(m.linear.norm(), 0.0);
  EXPECT_LT(m.angular.norm(), 1e-14);
}

TEST(Geometry, AngularVelocityMatchesMatrixLog) {
  std::mt19937_64 rng(2);
  const double dt = 1.0 / 15;
  for (int i = 0; i < 200; ++i) {
    const CameraPose a = oracle::random_pose(rng), b = oracle::random_pose(rng);
    const Mat3 rel = oracle::rotation_matrix(a.orientation).transpose() * oracle::rotation_matrix(b.orientation);
    if (oracle::rotation_angle(rel) > M_PI - 1e-3) continue;
    const Vec3 expected = oracle::matrix_log(rel) / dt;
    EXPECT_LT((relative_motion(a, b, dt).angular - expected).norm(), 1e-8);
  }
}

TEST(Geometry, ZeroMotionKeepsPose) {
  std::mt19937_64 rng(3);
  const CameraPose p = oracle::random_pose(rng);
  const CameraPose q = integrate_motion(p, {}, 0.25);
  EXPECT_EQ(q.position, p.position);
  EXPECT_LT(quat_distance(q.orientation, p.orientation), 1e-15);
}

TEST(Geometry, RoundTripOverRandomPairs) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const CameraPose a = oracle::random_pose(rng), b = oracle::random_pose(rng);
    const double dt = i % 2 ? 1.0 / 15 : 0.7;
    const CameraPose c = integrate_motion(a, relative_motion(a, b, dt), dt);
    EXPECT_LT((c.position - b.position).norm(), 1e-9);
    EXPECT_LT(quat_distance(c.orientation, b.orientation), 1e-9);
  }
}

TEST(Geometry, ForwardMotionFollowsOpticalAxis) {
  // A camera whose optical axis is world +x.
  const CameraPose p(Vec3::Zero(), look_rotation(Vec3::UnitX()));
  CameraMotion m;
  m.linear = Vec3(0, 0, 1);  // local +z is forward
  const CameraPose q = integrate_motion(p, m, 0.5);
  EXPECT_LT((q.position - Vec3(0.5, 0, 0)).norm(), 1e-12);
  // Local +x maps to the right of the direction of travel, +y to down.
  const Mat3 r = oracle::rotation_matrix(p.orientation);
  EXPECT_LT((r.col(0) - Vec3(0, -1, 0)).norm(), 1e-12);
  EXPECT_LT((r.col(1) - Vec3(0, 0, -1)).norm(), 1e-12);
}

TEST(Geometry, QuaternionAlgebra) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Quat q = oracle::random_pose(rng).orientation;
    const Quat e = quat_compose(q, quat_inverse(q));
    EXPECT_LT(quat_distance(e, Quat(1, 0, 0, 0)), 1e-12);
    // Hamilton product against the matrix product.
    const Quat r = oracle::random_pose(rng).orientation;
    const Mat3 expected = oracle::rotation_matrix(q) * oracle::rotation_matrix(r);
    EXPECT_LT((quat_to_matrix(quat_compose(q, r)) - expected).norm(), 1e-12);
  }
  EXPECT_EQ(quat_to_matrix(Quat(1, 0, 0, 0)), Mat3::Identity());
}

TEST(Geometry, ExpLogRoundTrip) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    Quat q = oracle::random_pose(rng).orientation;
    const Quat back = exp_map(log_map(q));
    EXPECT_LT(quat_distance(back, q), 1e-10);
  }
  EXPECT_NEAR(log_map(exp_map(Vec3(1e-9, 0, 0))).x(), 1e-9, 1e-22);
}

TEST(Geometry, LogMapIsShortestArc) {
  const Quat q = exp_map(Vec3(0, 0, 1.5 * M_PI));  // same rotation as -0.5 pi
  EXPECT_LT((log_map(q) - Vec3(0, 0, -0.5 * M_PI)).norm(), 1e-12);
}

TEST(Geometry, CanonicalSignAndUnitNorm) {
  const CameraPose p(Vec3::Zero(), Quat(-2, 0.4, 0, 0));
  EXPECT_GE(p.orientation[0], 0.0);
  EXPECT_NEAR(p.orientation.norm(), 1.0, 1e-15);
  const Quat z = quat_canonical(Quat(0, 0, -1, 0));
  EXPECT_EQ(z, Quat(0, 0, 1, 0));
}

TEST(Geometry, InvalidInputsThrow) {
  EXPECT_THROW(quat_normalize(Quat(0, 0, 0, 1e-300)), std::invalid_argument);
  EXPECT_THROW(relative_motion({}, {}, 0.0), std::invalid_argument);
  CameraMotion bad;
  bad.linear.x() = std::nan("");
  EXPECT_THROW(integrate_motion({}, bad, 0.1), std::invalid_argument);
  EXPECT_THROW(integrate_motion({}, {}, -1.0), std::invalid_argument);
  EXPECT_THROW(CameraPose(Vec3(INFINITY, 0, 0), Quat(1, 0, 0, 0)), std::invalid_argument);
}

TEST(Geometry, MotionIsFrameCovariant) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const CameraPose a = oracle::random_pose(rng), b = oracle::random_pose(rng), t = oracle::random_pose(rng);
    const auto m0 = relative_motion(a, b, 0.1);
    const auto m1 = relative_motion(compose(t, a), compose(t, b), 0.1);
    EXPECT_LT((m0.linear - m1.linear).norm(), 1e-9);
    EXPECT_LT((m0.angular - m1.angular).norm(), 1e-9);
  }
}

TEST(Geometry, OperationsKeepUnitNorm) {
  std::mt19937_64 rng(8);
  CameraPose p = oracle::random_pose(rng);
  CameraMotion m;
  m.angular = Vec3(0.3, -0.2, 0.9);
  m.linear = Vec3(1, 2, 3);
  for (int i = 0; i < 10000; ++i) p = integrate_motion(p, m, 1.0 / 15);
  EXPECT_NEAR(p.orientation.norm(), 1.0, 1e-9);
  EXPECT_GE(p.orientation[0], 0.0);
}

}  // namespace
