#include "dronecam/simworld.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dronecam::sim {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

int default_obstacles(WorldKind k) {
  switch (k) {
    case WorldKind::kTerrain: return 6;
    case WorldKind::kCanyon: return 10;
    default: return 30;
  }
}

struct CanyonShape {
  double phase, amplitude = 25.0, wavelength = 220.0, half_width = 14.0, ramp = 10.0, wall = 45.0;
  double centre(double x) const { return amplitude * std::sin(2 * M_PI * x / wavelength + phase); }
};

CanyonShape canyon_shape(std::uint64_t seed) {
  CanyonShape c;
  c.phase = 2 * M_PI * static_cast<double>(splitmix64(seed ^ 0xC0FFEEULL) >> 11) * 0x1.0p-53;
  return c;
}

}  // namespace

std::string kind_name(WorldKind k) {
  switch (k) {
    case WorldKind::kTerrain: return "terrain";
    case WorldKind::kCanyon: return "canyon";
    default: return "city-blocks";
  }
}

WorldKind parse_kind(const std::string& s) {
  if (s == "terrain") return WorldKind::kTerrain;
  if (s == "canyon") return WorldKind::kCanyon;
  if (s == "city-blocks") return WorldKind::kCityBlocks;
  throw std::invalid_argument("unknown world kind: " + s);
}

WorldSpec spec_from_json(const nlohmann::json& j) {
  WorldSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.size = j.value("size", 400.0);
  s.obstacle_count = j.value("obstacle_count", -1);
  if (!(s.size >= 50.0)) throw std::invalid_argument("world size must be at least 50");
  return s;
}

nlohmann::json spec_to_json(const WorldSpec& s) {
  return {{"seed", s.seed}, {"kind", kind_name(s.kind)}, {"size", s.size}, {"obstacle_count", s.obstacle_count}};
}

WorldSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open world spec " + path.string());
  return spec_from_json(nlohmann::json::parse(in));
}

double lattice_value(std::uint64_t seed, std::int64_t ix, std::int64_t iy, int octave) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix) * 0x8CB92BA72F3D8DD7ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy) * 0xD6E8FEB86659FD93ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(octave));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double x, double y, int octave) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double sx = smoothstep01(x - fx), sy = smoothstep01(y - fy);
  const double v00 = lattice_value(seed, ix, iy, octave), v10 = lattice_value(seed, ix + 1, iy, octave);
  const double v01 = lattice_value(seed, ix, iy + 1, octave), v11 = lattice_value(seed, ix + 1, iy + 1, octave);
  const double a = v00 + (v10 - v00) * sx;
  const double b = v01 + (v11 - v01) * sx;
  return a + (b - a) * sy;
}

double fbm(std::uint64_t seed, double x, double y) {
  double sum = 0, amp = 1, norm = 0, freq = 1;
  for (int o = 0; o < 5; ++o) {
    sum += amp * (2 * value_noise(seed, x * freq, y * freq, o) - 1);
    norm += amp;
    amp *= 0.5;
    freq *= 2;
  }
  return sum / norm;
}

World World::generate(const WorldSpec& spec) {
  World w;
  w.spec_ = spec;
  const int count = spec.obstacle_count < 0 ? default_obstacles(spec.kind) : spec.obstacle_count;
  const int n = static_cast<int>(std::lround(spec.size / w.spacing_)) + 1;
  w.heights_.setZero(n, n);
  const double o = w.origin();
  const CanyonShape canyon = canyon_shape(spec.seed);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = o + i * w.spacing_, y = o + j * w.spacing_;
      double h = 0;
      if (spec.kind == WorldKind::kTerrain) {
        h = 30.0 * fbm(spec.seed, x / 120.0, y / 120.0);
      } else if (spec.kind == WorldKind::kCanyon) {
        const double off = std::abs(y - canyon.centre(x));
        h = 3.0 * fbm(spec.seed, x / 60.0, y / 60.0) +
            canyon.wall * smoothstep01((off - canyon.half_width) / canyon.ramp);
      }
      w.heights_(j, i) = h;
    }
  }
  for (int j = 0; j + 1 < n; ++j) {
    for (int i = 0; i + 1 < n; ++i) {
      const double h00 = w.heights_(j, i), h10 = w.heights_(j, i + 1);
      const double h01 = w.heights_(j + 1, i), h11 = w.heights_(j + 1, i + 1);
      const double gx = std::max(std::abs(h10 - h00), std::abs(h11 - h01)) / w.spacing_;
      const double gy = std::max(std::abs(h01 - h00), std::abs(h11 - h10)) / w.spacing_;
      w.lipschitz_ = std::max(w.lipschitz_, std::hypot(gx, gy));
    }
  }
  w.max_height_ = w.heights_.maxCoeff();

  std::mt19937_64 rng(splitmix64(spec.seed ^ 0xB0B5ULL));
  auto uni = [&](double a, double b) { return a + (b - a) * static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto footprint_range = [&](double x0, double x1, double y0, double y1) {
    double lo = kInf, hi = -kInf;
    for (double y = y0; y <= y1 + 1e-9; y += 0.5 * w.spacing_)
      for (double x = x0; x <= x1 + 1e-9; x += 0.5 * w.spacing_) {
        const double h = w.height(x, y);
        lo = std::min(lo, h);
        hi = std::max(hi, h);
      }
    return std::pair{lo, hi};
  };
  const double margin = 0.4 * spec.size;
  if (spec.kind == WorldKind::kCityBlocks) {
    const double pitch = 40.0;
    const int cells = std::max(1, static_cast<int>(std::floor(2 * margin / pitch)));
    std::vector<int> ids(static_cast<size_t>(cells * cells));
    std::iota(ids.begin(), ids.end(), 0);
    for (size_t k = ids.size(); k > 1; --k) std::swap(ids[k - 1], ids[rng() % k]);
    for (int k = 0; k < std::min<int>(count, static_cast<int>(ids.size())); ++k) {
      const int ci = ids[static_cast<size_t>(k)] % cells, cj = ids[static_cast<size_t>(k)] / cells;
      const double cx = -margin + (ci + 0.5) * pitch + uni(-4, 4);
      const double cy = -margin + (cj + 0.5) * pitch + uni(-4, 4);
      const double hx = uni(6, 14), hy = uni(6, 14);
      w.boxes_.push_back({Vec3(cx - hx, cy - hy, 0.0), Vec3(cx + hx, cy + hy, uni(10, 45))});
    }
  } else {
    for (int k = 0; k < count; ++k) {
      double cx, cy, hx, hy, top;
      if (spec.kind == WorldKind::kCanyon) {
        cx = uni(-margin, margin);
        cy = canyon.centre(cx) + uni(-7, 7);
        hx = uni(1.5, 3);
        hy = uni(1.5, 3);
        top = uni(15, 40);
      } else {
        cx = uni(-margin, margin);
        cy = uni(-margin, margin);
        hx = uni(3, 7);
        hy = uni(3, 7);
        top = uni(15, 35);
      }
      const auto [lo, hi] = footprint_range(cx - hx, cx + hx, cy - hy, cy + hy);
      w.boxes_.push_back({Vec3(cx - hx, cy - hy, lo - 1.0), Vec3(cx + hx, cy + hy, hi + top)});
    }
  }
  return w;
}

double World::height(double x, double y) const {
  const double o = origin();
  const int n = static_cast<int>(heights_.cols());
  const double gx = std::clamp((x - o) / spacing_, 0.0, static_cast<double>(n - 1));
  const double gy = std::clamp((y - o) / spacing_, 0.0, static_cast<double>(heights_.rows() - 1));
  const int i = std::min(static_cast<int>(gx), n - 2);
  const int j = std::min(static_cast<int>(gy), static_cast<int>(heights_.rows()) - 2);
  const double fx = gx - i, fy = gy - j;
  const double a = heights_(j, i) + (heights_(j, i + 1) - heights_(j, i)) * fx;
  const double b = heights_(j + 1, i) + (heights_(j + 1, i + 1) - heights_(j + 1, i)) * fx;
  return a + (b - a) * fy;
}

double World::terrain_ray(const Vec3& o, const Vec3& d, double far) const {
  auto gap = [&](double t) { return terrain_gap(o + t * d); };
  double g = gap(0.0);
  if (g <= 0) return 1e-9;
  // Gap shrinks no faster than `rate` per unit of t.
  const double rate = lipschitz_ * std::hypot(d.x(), d.y()) - d.z();
  if (rate <= 0) return kInf;
  if (o.z() > max_height_ && d.z() >= 0) return kInf;
  double t = 0;
  for (int it = 0; it < 100000 && t < far; ++it) {
    const double tn = std::min(far, t + std::max(g / rate, 1e-3));
    const double gn = gap(tn);
    if (gn <= 0) {
      double lo = t, hi = tn;
      for (int b = 0; b < 60 && hi - lo > 1e-10; ++b) {
        const double mid = 0.5 * (lo + hi);
        (gap(mid) > 0 ? lo : hi) = mid;
      }
      return hi;
    }
    if (d.z() >= 0 && o.z() + tn * d.z() > max_height_) return kInf;
    t = tn;
    g = gn;
  }
  return kInf;
}

double World::box_ray(const Vec3& o, const Vec3& d, double far) const {
  double best = kInf;
  for (const auto& b : boxes_) {
    double t0 = 0.0, t1 = far;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(d[a]) < 1e-15) {
        if (o[a] < b.lo[a] || o[a] > b.hi[a]) miss = true;
        continue;
      }
      double ta = (b.lo[a] - o[a]) / d[a], tb = (b.hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) miss = true;
    }
    if (!miss) best = std::min(best, std::max(t0, 1e-9));
  }
  return best;
}

double World::ray_cast(const Vec3& o, const Vec3& d, double far) const {
  const double tb = box_ray(o, d, far);
  const double tt = terrain_ray(o, d, std::min(far, tb));
  return std::min(tb, tt);
}

double World::box_distance(const Vec3& p) const {
  double best = kInf;
  for (const auto& b : boxes_) {
    const Vec3 q = p.cwiseMax(b.lo).cwiseMin(b.hi);
    best = std::min(best, (p - q).norm());
  }
  return best;
}

double Camera::focal() const { return 0.5 * width / std::tan(0.5 * hfov_deg * M_PI / 180.0); }

Vec3 Camera::ray(int u, int v) const {
  const double f = focal();
  return Vec3((u + 0.5 - 0.5 * width) / f, (v + 0.5 - 0.5 * height) / f, 1.0).normalized();
}

namespace {

void render_rows(const World& world, const CameraPose& pose, const Camera& cam, DepthMap& map, int v0, int v1) {
  const geo::Mat3 r = geo::quat_to_matrix(pose.orientation);
  for (int v = v0; v < v1; ++v)
    for (int u = 0; u < cam.width; ++u)
      map.depth[static_cast<size_t>(v) * cam.width + u] = world.ray_cast(pose.position, r * cam.ray(u, v));
}

DepthMap empty_map(const Camera& cam) {
  if (cam.width < kGridCols || cam.height < kGridRows) throw std::invalid_argument("render: resolution below 5x9");
  DepthMap m;
  m.width = cam.width;
  m.height = cam.height;
  m.hfov_deg = cam.hfov_deg;
  m.depth.assign(static_cast<size_t>(cam.width) * cam.height, kInf);
  return m;
}

}  // namespace

DepthMap render_depth_serial(const World& world, const CameraPose& pose, const Camera& cam) {
  DepthMap m = empty_map(cam);
  render_rows(world, pose, cam, m, 0, cam.height);
  return m;
}

DepthMap render_depth(const World& world, const CameraPose& pose, const Camera& cam) {
  DepthMap m = empty_map(cam);
  if (omp_get_max_threads() == 1) {
    render_rows(world, pose, cam, m, 0, cam.height);
    return m;
  }
#pragma omp parallel for schedule(dynamic)
  for (int v = 0; v < cam.height; ++v) render_rows(world, pose, cam, m, v, v + 1);
  return m;
}

int tile_of(int u, int width, int tiles) {
  return static_cast<int>(std::floor((u + 0.5) * tiles / width));
}

PatchObservation patch_features(const DepthMap& map, int feature_dim) {
  if (feature_dim < 6) throw std::invalid_argument("patch_features: feature_dim must be at least 6");
  PatchObservation obs;
  obs.features = Eigen::MatrixXd::Zero(kGridCells, feature_dim);
  obs.depth.setZero();
  auto inv = [&](int u, int v) {
    const double d = map.at(u, v);
    return std::isinf(d) ? 0.0 : 1.0 / d;
  };
  struct Acc {
    double sum = 0, mn = kInf, mx = -kInf, vstep = 0, hstep = 0, depth = 0;
    int n = 0, sky = 0, nv = 0, nh = 0;
  };
  std::vector<Acc> acc(kGridCells);
  for (int v = 0; v < map.height; ++v) {
    const int tr = tile_of(v, map.height, kGridRows);
    for (int u = 0; u < map.width; ++u) {
      const int tc = tile_of(u, map.width, kGridCols);
      Acc& a = acc[static_cast<size_t>(tr * kGridCols + tc)];
      const double d = map.at(u, v);
      const double id = inv(u, v);
      a.sum += id;
      a.mn = std::min(a.mn, id);
      a.mx = std::max(a.mx, id);
      a.depth += std::isinf(d) ? World::kFar : std::min(d, World::kFar);
      a.sky += std::isinf(d) ? 1 : 0;
      ++a.n;
      if (v + 1 < map.height && tile_of(v + 1, map.height, kGridRows) == tr) {
        a.vstep += inv(u, v + 1) - id;
        ++a.nv;
      }
      if (u + 1 < map.width && tile_of(u + 1, map.width, kGridCols) == tc) {
        a.hstep += std::abs(inv(u + 1, v) - id);
        ++a.nh;
      }
    }
  }
  for (int k = 0; k < kGridCells; ++k) {
    const Acc& a = acc[static_cast<size_t>(k)];
    obs.features(k, 0) = 10.0 * a.sum / a.n;
    obs.features(k, 1) = 10.0 * a.mn;
    obs.features(k, 2) = 10.0 * a.mx;
    obs.features(k, 3) = a.nv ? 10.0 * a.vstep / a.nv : 0.0;
    obs.features(k, 4) = a.nh ? 10.0 * a.hstep / a.nh : 0.0;
    obs.features(k, 5) = static_cast<double>(a.sky) / a.n;
    obs.depth(k / kGridCols, k % kGridCols) = a.depth / a.n;
  }
  return obs;
}

PatchObservation observe(const World& world, const CameraPose& pose, int feature_dim, const Camera& cam) {
  return patch_features(render_depth(world, pose, cam), feature_dim);
}

double segment_box_distance(const Box& box, const Vec3& a, const Vec3& b) {
  auto dist = [&](double t) {
    const Vec3 p = a + t * (b - a);
    return (p - p.cwiseMax(box.lo).cwiseMin(box.hi)).norm();
  };
  // Distance to a convex set is convex along the segment.
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = 0, hi = 1;
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = dist(x1), f2 = dist(x2);
  for (int it = 0; it < 80; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = dist(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = dist(x2);
    }
  }
  return std::min({dist(0.0), dist(1.0), f1, f2});
}

bool collision(const World& world, const Vec3& a, const Vec3& b, double clearance) {
  for (const auto& box : world.boxes())
    if (segment_box_distance(box, a, b) < clearance) return true;
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / 0.05)));
  const double inflate = (world.lipschitz() + 1.0) * 0.5 * len / n;
  for (int i = 0; i <= n; ++i) {
    const Vec3 p = a + (b - a) * (static_cast<double>(i) / n);
    if (world.terrain_gap(p) < clearance + inflate) return true;
  }
  return false;
}

void write_pgm(const std::filesystem::path& path, const DepthMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  for (double d : map.depth) {
    const double v = std::isinf(d) ? 0.0 : std::min(1.0, 5.0 / d);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace dronecam::sim
