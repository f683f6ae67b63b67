#pragma once

// Reference computations written independently of the library code paths.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "dronecam/geometry.hpp"

namespace oracle {

using dronecam::geo::CameraPose;
using dronecam::geo::Mat3;
using dronecam::geo::Quat;
using dronecam::geo::Vec3;
using MatX = Eigen::MatrixXd;

inline CameraPose random_pose(std::mt19937_64& rng, double extent = 10.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-extent, extent);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  return CameraPose(Vec3(u(rng), u(rng), u(rng)), q / q.norm());
}

// Rotation matrix of a unit Hamilton quaternion, expanded by hand.
inline Mat3 rotation_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline double rotation_angle(const Mat3& r) { return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0)); }

// Axis-angle vector of a rotation matrix with angle below pi.
inline Vec3 matrix_log(const Mat3& r) {
  const double th = rotation_angle(r);
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (th < 1e-12) return 0.5 * s;
  return th / (2.0 * std::sin(th)) * s;
}

inline double auc_pairs(const std::vector<double>& correct, const std::vector<double>& incorrect) {
  double wins = 0;
  for (double c : correct)
    for (double i : incorrect) wins += i > c ? 1.0 : (i == c ? 0.5 : 0.0);
  return wins / (static_cast<double>(correct.size()) * static_cast<double>(incorrect.size()));
}

// Dense causal attention for one block of queries starting at absolute
// position `start`, straight from the definition.
inline MatX attention(const MatX& q, const MatX& k, const MatX& v, int start, int heads) {
  const int n = static_cast<int>(q.rows()), d = static_cast<int>(q.cols()), hd = d / heads;
  MatX out = MatX::Zero(n, d);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < n; ++i) {
      const int len = start + i + 1;
      std::vector<double> s(static_cast<size_t>(len));
      double mx = -INFINITY;
      for (int j = 0; j < len; ++j) {
        double dot = 0;
        for (int c = 0; c < hd; ++c) dot += q(i, h * hd + c) * k(j, h * hd + c);
        s[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[static_cast<size_t>(j)]);
      }
      double z = 0;
      for (auto& x : s) z += x = std::exp(x - mx);
      for (int j = 0; j < len; ++j)
        for (int c = 0; c < hd; ++c) out(i, h * hd + c) += s[static_cast<size_t>(j)] / z * v(j, h * hd + c);
    }
  return out;
}

}  // namespace oracle
