#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "dronecam/geometry.hpp"

namespace dronecam::sim {

using geo::CameraPose;
using geo::Vec3;

enum class WorldKind { kTerrain, kCanyon, kCityBlocks };

std::string kind_name(WorldKind k);
WorldKind parse_kind(const std::string& s);

struct WorldSpec {
  std::uint64_t seed = 0;
  WorldKind kind = WorldKind::kTerrain;
  double size = 400.0;
  // Negative selects the per-kind default.
  int obstacle_count = -1;
};

WorldSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const WorldSpec& s);
WorldSpec load_spec(const std::filesystem::path& path);

struct Box {
  Vec3 lo;
  Vec3 hi;
};

// Lattice value noise in [0, 1): smoothstep interpolation of hashed corner
// values. fbm sums 5 octaves with gain 0.5 and lacunarity 2, mapped to [-1, 1].
double lattice_value(std::uint64_t seed, std::int64_t ix, std::int64_t iy, int octave);
double value_noise(std::uint64_t seed, double x, double y, int octave);
double fbm(std::uint64_t seed, double x, double y);

class World {
 public:
  static World generate(const WorldSpec& spec);

  const WorldSpec& spec() const { return spec_; }
  // Bilinear interpolation of the height grid; clamped to the edge outside bounds.
  double height(double x, double y) const;
  double node_height(int i, int j) const { return heights_(j, i); }
  int nodes_x() const { return static_cast<int>(heights_.cols()); }
  int nodes_y() const { return static_cast<int>(heights_.rows()); }
  double spacing() const { return spacing_; }
  double origin() const { return -0.5 * spec_.size; }
  // Bound on |grad h| of the interpolated surface.
  double lipschitz() const { return lipschitz_; }
  double max_height() const { return max_height_; }
  const std::vector<Box>& boxes() const { return boxes_; }

  // Nearest hit along o + t d (d unit), t in (0, far]; +inf if none.
  double ray_cast(const Vec3& o, const Vec3& d, double far = kFar) const;
  double terrain_ray(const Vec3& o, const Vec3& d, double far) const;
  double box_ray(const Vec3& o, const Vec3& d, double far) const;

  // Distance from p to the nearest box (0 inside); +inf without boxes.
  double box_distance(const Vec3& p) const;
  // Height of p above terrain.
  double terrain_gap(const Vec3& p) const { return p.z() - height(p.x(), p.y()); }

  static constexpr double kFar = 1000.0;

 private:
  WorldSpec spec_;
  double spacing_ = 2.0;
  Eigen::MatrixXd heights_;  // rows: y, cols: x
  double lipschitz_ = 0.0;
  double max_height_ = 0.0;
  std::vector<Box> boxes_;
};

struct Camera {
  int width = 80;
  int height = 45;
  double hfov_deg = 70.0;
  double focal() const;
  // Unit ray direction in the camera frame through the centre of pixel (u, v).
  Vec3 ray(int u, int v) const;
};

struct DepthMap {
  int width = 0;
  int height = 0;
  double hfov_deg = 70.0;
  std::vector<double> depth;  // row-major, +inf for sky
  double at(int u, int v) const { return depth[static_cast<size_t>(v) * width + u]; }
};

DepthMap render_depth(const World& world, const CameraPose& pose, const Camera& cam = {});
DepthMap render_depth_serial(const World& world, const CameraPose& pose, const Camera& cam = {});

inline constexpr int kGridRows = 5;
inline constexpr int kGridCols = 9;
inline constexpr int kGridCells = kGridRows * kGridCols;

struct PatchObservation {
  // kGridCells x F, row-major over (row, col).
  Eigen::MatrixXd features;
  // Mean depth per tile, sky counted at the far plane.
  Eigen::Matrix<double, kGridRows, kGridCols> depth;
};

// Tile of pixel column u among `cols` tiles across `width` pixels.
int tile_of(int u, int width, int tiles);

// Channels: 0-2 mean/min/max inverse depth (x10), 3 mean vertical inverse
// depth step (x10), 4 mean absolute horizontal step (x10), 5 sky fraction;
// remaining channels zero.
PatchObservation patch_features(const DepthMap& map, int feature_dim = 32);

PatchObservation observe(const World& world, const CameraPose& pose, int feature_dim = 32, const Camera& cam = {});

bool collision(const World& world, const Vec3& a, const Vec3& b, double clearance = 0.2);
// Exact minimum distance between segment ab and a box.
double segment_box_distance(const Box& box, const Vec3& a, const Vec3& b);

void write_pgm(const std::filesystem::path& path, const DepthMap& map);

}  // namespace dronecam::sim
