#include "dronecam/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

namespace dronecam::metrics {

namespace fs = std::filesystem;
using json = nlohmann::json;
using geo::Vec3;

namespace {

struct Velocities {
  std::vector<Vec3> v, w;
};

Velocities velocities(const std::vector<geo::CameraPose>& poses, double fps) {
  if (poses.size() < 3) throw std::invalid_argument("smoothness: need at least 3 poses");
  if (!(fps > 0)) throw std::invalid_argument("smoothness: fps must be > 0");
  Velocities out;
  for (size_t i = 0; i + 1 < poses.size(); ++i) {
    const auto m = geo::relative_motion(poses[i], poses[i + 1], 1.0 / fps);
    out.v.push_back(m.linear);
    out.w.push_back(m.angular);
  }
  return out;
}

double mean_norm(const std::vector<Vec3>& x) {
  double s = 0;
  for (const auto& a : x) s += a.norm();
  return s / static_cast<double>(x.size());
}

double ratio(double change, double mean) { return change == 0 ? 0.0 : 100.0 * change / mean; }

std::string num(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

}  // namespace

Smoothness smoothness(const std::vector<geo::CameraPose>& poses, double fps) {
  const auto vel = velocities(poses, fps);
  double dv = 0, dw = 0;
  for (size_t t = 0; t + 1 < vel.v.size(); ++t) {
    dv = std::max(dv, (vel.v[t + 1] - vel.v[t]).norm());
    dw = std::max(dw, (vel.w[t + 1] - vel.w[t]).norm());
  }
  return {ratio(dv, mean_norm(vel.v)), ratio(dw, std::max(mean_norm(vel.w), kOmegaFloor))};
}

BoundarySplit boundary_smoothness(const std::vector<geo::CameraPose>& poses, const std::vector<int>& steps,
                                  double fps) {
  const auto vel = velocities(poses, fps);
  double at = 0, away = 0;
  // The transition from v_{t-1} to v_t happens at pose index t.
  for (size_t t = 1; t < vel.v.size(); ++t) {
    const double d = (vel.v[t] - vel.v[t - 1]).norm();
    if (std::find(steps.begin(), steps.end(), static_cast<int>(t)) != steps.end()) {
      at = std::max(at, d);
    } else {
      away = std::max(away, d);
    }
  }
  const double mean = mean_norm(vel.v);
  return {ratio(at, mean), ratio(away, mean)};
}

double collision_rate(const std::vector<rollout::EpisodeResult>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("collision_rate: no episodes");
  const auto hits = std::count_if(episodes.begin(), episodes.end(),
                                  [](const auto& e) { return e.terminated_by == rollout::Termination::kCollision; });
  return static_cast<double>(hits) / static_cast<double>(episodes.size());
}

EpisodeRecord record_of(const std::string& name, const rollout::EpisodeResult& e) {
  EpisodeRecord r{name, rollout::termination_name(e.terminated_by), e.duration_s, e.completed_frames, 0.0, 0.0};
  if (e.poses.size() >= 3) {
    const auto s = smoothness(e.poses);
    r.delta_v = s.delta_v;
    r.delta_omega = s.delta_omega;
  }
  return r;
}

MetricsReport make_report(const std::vector<std::string>& names, const std::vector<rollout::EpisodeResult>& episodes) {
  if (names.size() != episodes.size()) throw std::invalid_argument("make_report: names and episodes differ in length");
  MetricsReport r;
  r.episodes = static_cast<int>(episodes.size());
  if (episodes.empty()) return r;
  r.collision_rate = collision_rate(episodes);
  int n = 0;
  for (size_t i = 0; i < episodes.size(); ++i) {
    r.per_episode.push_back(record_of(names[i], episodes[i]));
    if (episodes[i].poses.size() >= 3) {
      r.delta_v += r.per_episode.back().delta_v;
      r.delta_omega += r.per_episode.back().delta_omega;
      ++n;
    }
  }
  if (n > 0) {
    r.delta_v /= n;
    r.delta_omega /= n;
  }
  return r;
}

json report_to_json(const MetricsReport& r) {
  json eps = json::array();
  for (const auto& e : r.per_episode)
    eps.push_back({{"episode", e.name},
                   {"terminated_by", e.terminated_by},
                   {"duration_s", e.duration_s},
                   {"frames", e.frames},
                   {"delta_v", e.delta_v},
                   {"delta_omega", e.delta_omega}});
  return {{"episodes", r.episodes},
          {"collision_rate", r.collision_rate},
          {"delta_v", r.delta_v},
          {"delta_omega", r.delta_omega},
          {"per_episode", eps}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.episodes = j.at("episodes");
  r.collision_rate = j.at("collision_rate");
  r.delta_v = j.at("delta_v");
  r.delta_omega = j.at("delta_omega");
  for (const auto& e : j.at("per_episode"))
    r.per_episode.push_back({e.at("episode"), e.at("terminated_by"), e.at("duration_s"), e.at("frames"), e.at("delta_v"),
                             e.at("delta_omega")});
  return r;
}

void emit_report(const fs::path& path, const MetricsReport& r, Format format, bool aggregate_only) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (format == Format::kJson) {
    MetricsReport copy = r;
    if (aggregate_only) copy.per_episode.clear();
    out << report_to_json(copy).dump(2) << '\n';
  } else {
    out << kCsvHeader << '\n';
    if (!aggregate_only)
      for (const auto& e : r.per_episode)
        out << e.name << ',' << e.terminated_by << ',' << num(e.duration_s) << ',' << e.frames << ',' << num(e.delta_v)
            << ',' << num(e.delta_omega) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MetricsReport evaluate_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("episode directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<std::string> names;
  std::vector<rollout::EpisodeResult> eps;
  for (const auto& f : files) {
    std::ifstream in(f);
    const json j = json::parse(in);
    // Reports and other JSON files may share the directory.
    if (!j.is_object() || !j.contains("poses") || !j.contains("terminated_by")) continue;
    names.push_back(f.stem().string());
    eps.push_back(rollout::episode_from_json(j));
  }
  return make_report(names, eps);
}

}  // namespace dronecam::metrics
