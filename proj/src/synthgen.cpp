#include "dronecam/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "json.hpp"

namespace dronecam::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string style_name(Style s) {
  switch (s) {
    case Style::kFlyover: return "flyover";
    case Style::kCorridor: return "corridor";
    case Style::kOrbit: return "orbit";
    case Style::kReveal: return "reveal";
  }
  return "?";
}

Style parse_style(const std::string& s) {
  if (s == "flyover") return Style::kFlyover;
  if (s == "corridor") return Style::kCorridor;
  if (s == "orbit") return Style::kOrbit;
  if (s == "reveal") return Style::kReveal;
  throw std::invalid_argument("unknown style: " + s);
}

std::vector<Style> parse_styles(const std::string& comma_list) {
  std::vector<Style> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_style(item));
  }
  if (out.empty()) throw std::invalid_argument("empty style list");
  return out;
}

CorruptMode parse_corrupt_mode(const std::string& s) {
  if (s == "jump") return CorruptMode::kJump;
  if (s == "jitter") return CorruptMode::kJitter;
  throw std::invalid_argument("unknown corruption mode: " + s);
}

double surface_height(const sim::World& world, double x, double y) {
  double h = world.height(x, y);
  for (const auto& b : world.boxes())
    if (x >= b.lo.x() && x <= b.hi.x() && y >= b.lo.y() && y <= b.hi.y()) h = std::max(h, b.hi.z());
  return h;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3 - 2 * x);
}

double wrap_angle(double a) { return std::remainder(a, 2 * M_PI); }

Vec3 heading(double psi, double pitch = 0.0) {
  return Vec3(std::cos(psi) * std::cos(pitch), std::sin(psi) * std::cos(pitch), std::sin(pitch));
}

// Gaussian smoothing with clamped edges.
std::vector<double> smooth(const std::vector<double>& x, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> w(static_cast<size_t>(2 * r + 1));
  double total = 0;
  for (int k = -r; k <= r; ++k) total += w[static_cast<size_t>(k + r)] = std::exp(-0.5 * k * k / (sigma * sigma));
  const int n = static_cast<int>(x.size());
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (int k = -r; k <= r; ++k) acc += w[static_cast<size_t>(k + r)] * x[static_cast<size_t>(std::clamp(i + k, 0, n - 1))];
    out[static_cast<size_t>(i)] = acc / total;
  }
  return out;
}

double probe(const sim::World& world, const Vec3& p, const Vec3& dir, double range) {
  return std::min(world.ray_cast(p, dir, range), range);
}

struct Path {
  std::vector<Vec3> positions;
  std::vector<Vec3> forwards;
};

[[noreturn]] void fail(const std::string& what) { throw GenerationFailure(what); }

void validate(const sim::World& world, const Path& path, const ExpertConfig& cfg) {
  const double lim = 0.5 * world.spec().size - 5.0;
  for (size_t i = 0; i < path.positions.size(); ++i) {
    const Vec3& p = path.positions[i];
    if (!p.allFinite() || std::abs(p.x()) > lim || std::abs(p.y()) > lim) fail("path leaves the world");
    const Vec3& a = i == 0 ? p : path.positions[i - 1];
    if (sim::collision(world, a, p, cfg.safety)) fail("path collides");
  }
}

traj::Clip to_clip(const Path& path, int fps, const std::string& id) {
  traj::Clip c;
  c.id = id;
  c.fps = fps;
  for (size_t i = 0; i < path.positions.size(); ++i)
    c.poses.emplace_back(path.positions[i], geo::look_rotation(path.forwards[i]));
  return c;
}

Vec3 random_start(const sim::World& world, Rng& rng, const ExpertConfig& cfg) {
  const double half = 0.5 * world.spec().size * cfg.start_region;
  return Vec3(uniform(rng, -half, half), uniform(rng, -half, half), 0.0);
}

int frames_of(const ExpertConfig& cfg) { return static_cast<int>(std::lround(cfg.duration_s * cfg.fps)); }

Path flyover(const sim::World& world, Rng& rng, const ExpertConfig& cfg) {
  const int n = frames_of(cfg);
  const double dt = 1.0 / cfg.fps;
  Vec3 p = random_start(world, rng, cfg);
  const double psi0 = uniform(rng, -M_PI, M_PI);
  const double amp = uniform(rng, 0.1, 0.35), period = uniform(rng, 8, 16), phase = uniform(rng, -M_PI, M_PI);
  const double pitch = -uniform(rng, 15, 25) * M_PI / 180.0;
  std::vector<Vec3> xy;
  std::vector<double> psi, ground;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    psi.push_back(psi0 + amp * std::sin(2 * M_PI * t / period + phase));
    xy.push_back(p);
    ground.push_back(surface_height(world, p.x(), p.y()));
    p += cfg.speed * dt * heading(psi.back());
  }
  // Windowed mean then Gaussian smoothing keeps the altitude C1 while
  // tracking the terrain trend.
  const int w = cfg.fps / 2;
  std::vector<double> target(ground.size());
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int k = -w; k <= w; ++k) s += ground[static_cast<size_t>(std::clamp(i + k, 0, n - 1))];
    target[static_cast<size_t>(i)] = s / (2 * w + 1) + cfg.flyover_clearance;
  }
  const auto z = smooth(target, 0.5 * cfg.fps);
  Path path;
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<size_t>(i);
    const double gap = z[u] - ground[u];
    if (std::abs(gap - cfg.flyover_clearance) > cfg.clearance_tolerance * cfg.flyover_clearance)
      fail("flyover cannot hold its clearance");
    path.positions.emplace_back(xy[u].x(), xy[u].y(), z[u]);
    path.forwards.push_back(heading(psi[u], pitch));
  }
  return path;
}

constexpr std::array<double, 11> kProbeDeg{0, 12, -12, 25, -25, 40, -40, 60, -60, 90, -90};

Path corridor(const sim::World& world, Rng& rng, const ExpertConfig& cfg) {
  const int n = frames_of(cfg);
  const double dt = 1.0 / cfg.fps;
  const double clearance = cfg.corridor_clearance * uniform(rng, 0.85, 1.3);
  // Prefer starts with a long open lane ahead and walls nearby.
  std::optional<std::pair<double, std::pair<Vec3, double>>> best;
  for (int k = 0; k < 64; ++k) {
    Vec3 s = random_start(world, rng, cfg);
    s.z() = world.height(s.x(), s.y()) + clearance;
    if (surface_height(world, s.x(), s.y()) > s.z() - clearance) continue;
    const double psi = uniform(rng, -M_PI, M_PI);
    const double ahead = probe(world, s, heading(psi), 60.0);
    if (ahead < 35.0) continue;
    const double side = std::min(probe(world, s, heading(psi + M_PI / 2), 30.0), probe(world, s, heading(psi - M_PI / 2), 30.0));
    const double score = ahead - side;
    if (!best || score > best->first) best = {score, {s, psi}};
  }
  if (!best) fail("corridor: no open lane");
  Vec3 p = best->second.first;
  double psi = best->second.second, rate = 0.0, vz = 0.0;
  const double pitch = -uniform(rng, 4, 10) * M_PI / 180.0;
  const double range = cfg.field_range;
  Path path;
  for (int i = 0; i < n; ++i) {
    path.positions.push_back(p);
    path.forwards.push_back(heading(psi, pitch));
    double u = 0.0, open = 0.0, best_open = -1.0, lane = 0.0, front = range;
    for (double deg : kProbeDeg) {
      const double a = deg * M_PI / 180.0;
      const double d = std::max(probe(world, p, heading(psi + a), range), 0.5);
      if (deg == 0) {
        front = d;
      } else {
        u -= (a > 0 ? 1.0 : -1.0) * cfg.field_gain * (1.0 / d - 1.0 / range) * std::cos(a);
        open += a > 0 ? d : -d;
      }
      if (std::abs(deg) <= 40 && d > best_open + 1e-9) {
        best_open = d;
        lane = a;
      }
    }
    u += (open >= 0 ? 1.0 : -1.0) * cfg.field_gain * (1.0 / front - 1.0 / range);
    u += cfg.lane_gain * lane;
    const double want = std::clamp(u, -cfg.max_turn_rate, cfg.max_turn_rate);
    rate += std::clamp(want - rate, -cfg.max_turn_accel * dt, cfg.max_turn_accel * dt);
    psi = wrap_angle(psi + rate * dt);
    constexpr double kOmega = 1.5;
    const double zt = world.height(p.x(), p.y()) + clearance;
    vz = std::clamp(vz + (kOmega * kOmega * (zt - p.z()) - 2 * kOmega * vz) * dt, -3.0, 3.0);
    p += cfg.speed * dt * heading(psi);
    p.z() += vz * dt;
  }
  return path;
}

Path orbit(const sim::World& world, Rng& rng, const ExpertConfig& cfg, Vec3& target, double& distance) {
  const int n = frames_of(cfg);
  const double dt = 1.0 / cfg.fps;
  const double half = 0.5 * world.spec().size * cfg.start_region;
  std::vector<const sim::Box*> near;
  for (const auto& b : world.boxes()) {
    const Vec3 c = 0.5 * (b.lo + b.hi);
    if (std::abs(c.x()) < half && std::abs(c.y()) < half) near.push_back(&b);
  }
  double radius;
  if (!near.empty() && std::bernoulli_distribution(0.8)(rng)) {
    const auto& b = *near[std::uniform_int_distribution<size_t>(0, near.size() - 1)(rng)];
    target = 0.5 * (b.lo + b.hi);
    radius = 0.5 * (b.hi - b.lo).head<2>().norm() + uniform(rng, 8, 14);
  } else {
    const Vec3 s = random_start(world, rng, cfg);
    target = Vec3(s.x(), s.y(), world.height(s.x(), s.y()));
    radius = uniform(rng, cfg.orbit_min_radius, 2 * cfg.orbit_min_radius);
  }
  const double theta0 = uniform(rng, -M_PI, M_PI);
  const double dir = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  const double omega = dir * cfg.speed / radius;
  double z = target.z() + uniform(rng, 4, 8);
  for (int i = 0; i < n; ++i) {
    const double th = theta0 + omega * i * dt;
    z = std::max(z, surface_height(world, target.x() + radius * std::cos(th), target.y() + radius * std::sin(th)) + 3.0);
  }
  distance = std::hypot(radius, z - target.z());
  Path path;
  for (int i = 0; i < n; ++i) {
    const double th = theta0 + omega * i * dt;
    const Vec3 p(target.x() + radius * std::cos(th), target.y() + radius * std::sin(th), z);
    path.positions.push_back(p);
    path.forwards.push_back((target - p).normalized());
  }
  return path;
}

Path reveal(const sim::World& world, Rng& rng, const ExpertConfig& cfg) {
  const int n = frames_of(cfg);
  const double dt = 1.0 / cfg.fps;
  Vec3 p;
  double psi = 0;
  bool found = false;
  for (int k = 0; k < 32 && !found; ++k) {
    p = random_start(world, rng, cfg);
    p.z() = surface_height(world, p.x(), p.y()) + uniform(rng, 2.0, 3.5);
    psi = uniform(rng, -M_PI, M_PI);
    found = probe(world, p, heading(psi), 40.0) >= 40.0;
  }
  if (!found) fail("reveal: no open direction");
  const double climb = uniform(rng, 0.35, 0.6);
  const double ramp = uniform(rng, 4, 7);
  const double pitch0 = uniform(rng, 0, 8) * M_PI / 180.0;
  const double pitch1 = -uniform(rng, 30, 45) * M_PI / 180.0;
  const double drift = uniform(rng, -0.08, 0.08);
  const double duration = (n - 1) * dt;
  Path path;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    path.positions.push_back(p);
    path.forwards.push_back(heading(psi, pitch0 + (pitch1 - pitch0) * smoothstep(t / duration)));
    const double vz = cfg.speed * climb * smoothstep(t / ramp);
    const double vh = std::sqrt(cfg.speed * cfg.speed - vz * vz);
    psi += drift * dt;
    p += vh * dt * heading(psi);
    p.z() += vz * dt;
  }
  return path;
}

}  // namespace

ExpertClip expert_trajectory(const sim::World& world, Style style, std::uint64_t seed, const ExpertConfig& cfg) {
  if (cfg.fps <= 0 || cfg.duration_s <= 0 || cfg.speed <= 0) throw std::invalid_argument("expert: bad config");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(style) + 1));
  ExpertClip out;
  out.style = style;
  Path path;
  switch (style) {
    case Style::kFlyover:
      path = flyover(world, rng, cfg);
      out.commanded_clearance = cfg.flyover_clearance;
      break;
    case Style::kCorridor:
      path = corridor(world, rng, cfg);
      out.commanded_clearance = cfg.corridor_clearance;
      break;
    case Style::kOrbit:
      path = orbit(world, rng, cfg, out.orbit_target, out.orbit_distance);
      break;
    case Style::kReveal:
      path = reveal(world, rng, cfg);
      break;
  }
  validate(world, path, cfg);
  out.clip = to_clip(path, cfg.fps, style_name(style));
  if (cfg.with_observations)
    for (size_t i = 0; i < out.clip.poses.size(); i += 5)
      out.observations.push_back(sim::observe(world, out.clip.poses[i], cfg.feature_dim));
  return out;
}

traj::Clip corrupt_clip(const traj::Clip& clip, CorruptMode mode, double magnitude, std::uint64_t seed) {
  if (!(magnitude >= 0) || !std::isfinite(magnitude)) throw std::invalid_argument("corrupt_clip: magnitude must be >= 0");
  traj::Clip out = clip;
  if (magnitude == 0 || clip.poses.empty()) return out;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  if (mode == CorruptMode::kJump) {
    const size_t n = clip.poses.size();
    const size_t i = n <= 2 ? n - 1 : std::uniform_int_distribution<size_t>(1, n - 2)(rng);
    Vec3 d;
    do {
      d = Vec3(gauss(rng), gauss(rng), gauss(rng));
    } while (d.norm() < 1e-6);
    out.poses[i].position += magnitude * d.normalized();
  } else {
    for (auto& p : out.poses) p.position += magnitude * Vec3(gauss(rng), gauss(rng), gauss(rng));
  }
  return out;
}

CameraPose start_pose(const sim::World& world, std::uint64_t seed, const ExpertConfig& cfg) {
  constexpr std::array<Style, 3> kStarts{Style::kFlyover, Style::kCorridor, Style::kReveal};
  ExpertConfig short_cfg = cfg;
  short_cfg.with_observations = false;
  for (std::uint64_t a = 0; a < 64; ++a) {
    const Style s = kStarts[(seed + a) % kStarts.size()];
    try {
      return expert_trajectory(world, s, mix_seed(seed, a), short_cfg).clip.poses.front();
    } catch (const GenerationFailure&) {
    }
  }
  throw GenerationFailure("start_pose: no collision-free start found");
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.worlds < 0 || cfg.clips_per_world < 0) throw std::invalid_argument("corpus: counts must be >= 0");
  if (cfg.styles.empty() || cfg.kinds.empty()) throw std::invalid_argument("corpus: styles and kinds required");
  if (cfg.corrupt_fraction < 0 || cfg.corrupt_fraction > 1) throw std::invalid_argument("corpus: corrupt fraction in [0, 1]");
  Corpus corpus;
  for (int w = 0; w < cfg.worlds; ++w) {
    char name[32];
    std::snprintf(name, sizeof name, "%s%03d", cfg.world_prefix.c_str(), w);
    sim::WorldSpec spec;
    spec.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(w));
    spec.kind = cfg.kinds[static_cast<size_t>(w) % cfg.kinds.size()];
    corpus.worlds.emplace_back(name, spec);
  }
  const int nw = cfg.worlds, k = cfg.clips_per_world;
  std::vector<std::optional<CorpusEntry>> slots(static_cast<size_t>(nw * k));
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(1, cfg.jobs)) if (cfg.jobs > 1)
  for (int w = 0; w < nw; ++w) {
    const auto& [name, spec] = corpus.worlds[static_cast<size_t>(w)];
    const sim::World world = sim::World::generate(spec);
    for (int j = 0; j < k; ++j) {
      const size_t first = static_cast<size_t>(j) % cfg.styles.size();
      for (size_t si = 0; si < cfg.styles.size() && !slots[static_cast<size_t>(w * k + j)]; ++si) {
        const Style style = cfg.styles[(first + si) % cfg.styles.size()];
        for (int a = 0; a < cfg.attempts; ++a) {
          const std::uint64_t seed = mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(j)), static_cast<std::uint64_t>(a));
          try {
            auto e = expert_trajectory(world, style, seed, cfg.expert);
            CorpusEntry entry;
            entry.id = name + "__" + style_name(style) + "_" + std::to_string(j);
            entry.world = name;
            entry.style = style;
            entry.clip = std::move(e.clip);
            entry.clip.id = entry.id;
            slots[static_cast<size_t>(w * k + j)] = std::move(entry);
            break;
          } catch (const GenerationFailure&) {
          }
        }
      }
    }
  }
  for (size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) {
      ++corpus.failures;
      continue;
    }
    CorpusEntry e = std::move(*slots[i]);
    Rng coin(mix_seed(cfg.seed ^ 0xc0ffeeULL, i));
    if (cfg.corrupt_fraction > 0 && std::uniform_real_distribution<double>(0, 1)(coin) < cfg.corrupt_fraction) {
      e.clip = corrupt_clip(e.clip, cfg.corrupt_mode, cfg.corrupt_magnitude, coin());
      e.corrupted = true;
    }
    corpus.clips.push_back(std::move(e));
  }
  return corpus;
}

void write_corpus(const fs::path& out, const Corpus& corpus, const CorpusConfig& cfg) {
  fs::create_directories(out / "worlds");
  fs::create_directories(out / "trajectories");
  for (const auto& [name, spec] : corpus.worlds) {
    std::ofstream f(out / "worlds" / (name + ".json"));
    f << sim::spec_to_json(spec).dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write world spec " + name);
  }
  std::ofstream truth(out / "truth.csv");
  truth << "id,is_correct\n";
  json clips = json::array();
  for (const auto& e : corpus.clips) {
    traj::write_trajectory_csv(out / "trajectories" / (e.id + ".csv"), e.clip.poses);
    truth << e.id << ',' << (e.corrupted ? 0 : 1) << '\n';
    clips.push_back({{"id", e.id}, {"world", e.world}, {"style", style_name(e.style)}, {"corrupted", e.corrupted}});
  }
  if (!truth) throw std::runtime_error("cannot write truth.csv in " + out.string());
  json styles = json::array();
  for (auto s : cfg.styles) styles.push_back(style_name(s));
  const json manifest{{"seed", cfg.seed},
                      {"worlds", cfg.worlds},
                      {"clips_per_world", cfg.clips_per_world},
                      {"styles", styles},
                      {"corrupt_fraction", cfg.corrupt_fraction},
                      {"corrupt_magnitude", cfg.corrupt_magnitude},
                      {"failures", corpus.failures},
                      {"clips", clips}};
  std::ofstream m(out / "manifest.json");
  m << manifest.dump(2) << '\n';
  if (!m) throw std::runtime_error("cannot write manifest in " + out.string());
}

}  // namespace dronecam::synth
