#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "dronecam/geometry.hpp"
#include "dronecam/simworld.hpp"
#include "dronecam/trajpipe.hpp"

namespace dronecam::data {

using geo::CameraMotion;
using geo::CameraPose;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr int kSubsteps = 5;
inline constexpr int kMaxFrames = 30;

struct FrameSample {
  CameraPose pose;
  Eigen::MatrixXd features;  // kGridCells x F, empty before observations are attached
  Eigen::Matrix<double, sim::kGridRows, sim::kGridCols> depth = decltype(depth)::Zero();
  std::array<CameraMotion, kSubsteps> actions{};
  // False for a sub-step whose end pose lies past the clip; such actions are
  // copies of the previous one and are excluded from the loss.
  std::array<bool, kSubsteps> action_valid{true, true, true, true, true};
};

struct TrainingSequence {
  std::string clip_id;
  std::vector<FrameSample> frames;
};

struct MotionStats {
  Vec6 mean = Vec6::Zero();
  Vec6 std = Vec6::Ones();
  // Mean clip scale factor: normalized units per world unit.
  double world_scale = 1.0;
};

Vec6 to_vec(const CameraMotion& m);
CameraMotion from_vec(const Vec6& v);

// Frame t takes the 15 fps pose 5t; its actions are the motions between poses
// 5t+k and 5t+k+1 at dt = 1/fps. Poses are re-expressed so frame 0 is identity.
TrainingSequence chunk_actions(const traj::Clip& clip);

MotionStats compute_stats(const std::vector<TrainingSequence>& corpus);
Vec6 normalize_motion(const CameraMotion& m, const MotionStats& s);
CameraMotion denormalize_motion(const Vec6& v, const MotionStats& s);

TrainingSequence hflip(const TrainingSequence& seq);

// Converts a world-unit observation to normalized units (scale s).
sim::PatchObservation scale_observation(sim::PatchObservation obs, double s);

// chunk_actions plus rendered observations at each frame's world pose.
TrainingSequence build_sequence(const traj::Clip& clip, const sim::World& world, int feature_dim = 32);

// World name encoded in a clip id as "<world>__<rest>".
std::string world_name_of(const std::string& clip_id);

struct Dataset {
  double flip_prob = 0.5;
  int feature_dim = 32;
  std::vector<TrainingSequence> sequences;
};

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);
nlohmann::json stats_to_json(const MotionStats& s);
MotionStats stats_from_json(const nlohmann::json& j);
void write_stats(const std::filesystem::path& path, const MotionStats& s);
MotionStats read_stats(const std::filesystem::path& path);

struct BuildResult {
  Dataset dataset;
  MotionStats stats;
  int skipped = 0;
};

BuildResult build_dataset(const std::filesystem::path& clips_dir, const std::filesystem::path& worlds_dir,
                          double flip_prob, int feature_dim = 32, int jobs = 1);

// Returns seq or its mirror image, drawn with probability p.
TrainingSequence maybe_flip(const TrainingSequence& seq, double p, std::mt19937_64& rng);

}  // namespace dronecam::data
