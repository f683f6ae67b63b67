#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dronecam/rollout.hpp"

namespace dronecam::metrics {

inline constexpr double kOmegaFloor = 1e-3;  // rad / s

struct Smoothness {
  double delta_v = 0.0;      // percent
  double delta_omega = 0.0;  // percent
};

// Per-step velocities from consecutive poses at `fps`; delta = max step
// change / mean magnitude * 100, with the angular mean floored at kOmegaFloor.
Smoothness smoothness(const std::vector<geo::CameraPose>& poses, double fps = 15.0);

// Largest |v_{t+1} - v_t| over transitions into the given step indices, and
// over all other transitions. Both are relative to the mean speed, percent.
struct BoundarySplit {
  double boundary = 0.0;
  double within = 0.0;
};
BoundarySplit boundary_smoothness(const std::vector<geo::CameraPose>& poses, const std::vector<int>& steps,
                                  double fps = 15.0);

struct EpisodeRecord {
  std::string name;
  std::string terminated_by;
  double duration_s = 0.0;
  int frames = 0;
  double delta_v = 0.0;
  double delta_omega = 0.0;
};

struct MetricsReport {
  int episodes = 0;
  double collision_rate = 0.0;
  // Means over episodes with at least 3 poses.
  double delta_v = 0.0;
  double delta_omega = 0.0;
  std::vector<EpisodeRecord> per_episode;
};

double collision_rate(const std::vector<rollout::EpisodeResult>& episodes);

EpisodeRecord record_of(const std::string& name, const rollout::EpisodeResult& e);
MetricsReport make_report(const std::vector<std::string>& names, const std::vector<rollout::EpisodeResult>& episodes);

nlohmann::json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

// CSV columns, in order.
inline constexpr const char* kCsvHeader = "episode,terminated_by,duration_s,frames,delta_v,delta_omega";

enum class Format { kJson, kCsv };
// aggregate_only drops per-episode rows (CSV is then header-only).
void emit_report(const std::filesystem::path& path, const MetricsReport& r, Format format, bool aggregate_only = false);

// Reads every *.json episode in `dir` in name order (other JSON files are
// skipped) and reports on them.
MetricsReport evaluate_directory(const std::filesystem::path& dir);

}  // namespace dronecam::metrics
