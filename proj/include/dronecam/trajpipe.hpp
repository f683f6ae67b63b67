#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dronecam/errors.hpp"
#include "dronecam/geometry.hpp"

namespace dronecam::traj {

using geo::CameraPose;

struct Clip {
  std::string id;
  int fps = 15;
  std::vector<CameraPose> poses;
  double scale_factor = 1.0;
};

struct UkfConfig {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 10.0;
  // Std of the per-frame random walk on velocity, world units per frame.
  double process_noise_scale = 0.05;
  // Std of position measurement noise, world units.
  double measurement_noise_scale = 0.1;
};

struct FilterVerdict {
  double max_deviation = 0.0;
  std::vector<double> per_frame_deviation;
  double threshold = 0.2;
  bool accepted = true;
};

struct ThresholdChoice {
  double threshold = 0.0;
  double youden_j = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct LabeledScore {
  double max_deviation;
  bool is_correct;
};

std::vector<Clip> segment_clips(const std::vector<CameraPose>& trajectory, int fps,
                                const std::string& id_prefix = "clip");
Clip normalize_scale(const Clip& clip);
bool speed_outlier_check(const Clip& clip);
Clip ukf_smooth(const Clip& clip, const UkfConfig& cfg = {});
FilterVerdict deviation_score(const Clip& clip, const Clip& smoothed, double threshold = 0.2);

ThresholdChoice select_threshold(const std::vector<LabeledScore>& labeled);
// Probability that a random incorrect clip scores above a random correct one
// (ties count one half).
double roc_auc(const std::vector<LabeledScore>& labeled);

namespace reason {
inline constexpr const char* kTooShort = "too-short";
inline constexpr const char* kDegenerate = "degenerate";
inline constexpr const char* kSpeedOutlier = "speed-outlier";
inline constexpr const char* kDivergence = "filter-divergence";
inline constexpr const char* kDeviation = "deviation";
inline constexpr const char* kIoError = "io-error";
}  // namespace reason

struct Rejection {
  std::string clip_id;
  std::string reason;
  std::optional<double> max_deviation;
};

struct RejectionReport {
  std::map<std::string, int> counts;
  std::vector<Rejection> rejections;
  int accepted = 0;
};

struct PipelineConfig {
  int fps = 15;
  double threshold = 0.2;
  UkfConfig ukf;
  int jobs = 1;
};

struct RawTrajectory {
  std::string id;
  std::vector<CameraPose> poses;
  std::optional<std::string> load_error;
};

struct ScoredClip {
  Clip clip;
  FilterVerdict verdict;
};

struct PipelineResult {
  std::vector<Clip> accepted;
  RejectionReport report;
  // Every clip that reached the deviation stage, in id order.
  std::vector<ScoredClip> scored;
};

PipelineResult run_pipeline(const std::vector<RawTrajectory>& raws, const PipelineConfig& cfg);

// File formats.
std::vector<CameraPose> read_trajectory(const std::filesystem::path& path);
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<CameraPose>& poses);
void write_clip(const std::filesystem::path& path, const Clip& clip);
Clip read_clip(const std::filesystem::path& path);
nlohmann::json report_to_json(const RejectionReport& report);

// Trajectory id of a segmented clip id ("<source>_s<k>").
std::string source_of(const std::string& clip_id);

// Loads every .csv/.jsonl trajectory in `input` (sorted by name), runs the
// pipeline and writes accepted clips as <id>.jsonl, report.json and
// scores.csv (clip_id,source,max_deviation) to `output`.
RejectionReport filter_directory(const std::filesystem::path& input, const std::filesystem::path& output,
                                 const PipelineConfig& cfg);

std::vector<LabeledScore> read_labels(const std::filesystem::path& path);

}  // namespace dronecam::traj
