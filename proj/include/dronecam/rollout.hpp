#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dronecam/dataset.hpp"
#include "dronecam/model.hpp"
#include "dronecam/simworld.hpp"

// Closed-loop flight: observe, predict five sub-step motions, integrate,
// check collisions.
namespace dronecam::rollout {

using geo::CameraMotion;
using geo::CameraPose;
using Motions = std::array<CameraMotion, data::kSubsteps>;

inline constexpr int kFrameRate = 3;
inline constexpr int kStepRate = 15;

// One frame of policy context. Poses are relative to the first frame of the
// context, world units; motions are in world units and empty for the newest frame.
struct ContextFrame {
  CameraPose pose;
  sim::PatchObservation obs;
  std::vector<CameraMotion> motions;
};

class Policy {
 public:
  virtual ~Policy() = default;
  // Motions for the newest frame of `context` given the episode's cond seed.
  virtual Motions act(std::uint64_t cond_seed, std::span<const ContextFrame> context) = 0;
  // Largest context the policy accepts.
  virtual int context_frames() const = 0;
  virtual int feature_dim() const { return 32; }
};

// Emits the same motion for every sub-step.
class ConstantPolicy : public Policy {
 public:
  explicit ConstantPolicy(const CameraMotion& m = {}, int context = 30) : m_(m), context_(context) {}
  Motions act(std::uint64_t, std::span<const ContextFrame>) override;
  int context_frames() const override { return context_; }

 private:
  CameraMotion m_;
  int context_;
};

// Runs the transformer incrementally; a context that extends the previous
// call by one frame reuses the cached keys and values, anything else is
// recomputed from scratch, with identical results either way.
class TransformerPolicy : public Policy {
 public:
  TransformerPolicy(const model::Model& m, const data::MotionStats& stats);
  Motions act(std::uint64_t cond_seed, std::span<const ContextFrame> context) override;
  int context_frames() const override { return model_->config().context_frames; }
  int feature_dim() const override { return model_->config().feature_dim; }
  // Number of from-scratch context rebuilds so far.
  int rebuilds() const { return rebuilds_; }

 private:
  const model::Model* model_;
  data::MotionStats stats_;
  std::optional<model::Session> session_;
  std::uint64_t cond_seed_ = 0;
  std::vector<ContextFrame> fed_;
  int rebuilds_ = 0;
  model::FrameInput to_input(const ContextFrame& f) const;
  model::Vec6 to_normalized(const CameraMotion& m) const;
  Motions decode_frame(const ContextFrame& f);
};

enum class Termination { kDuration, kCollision };
std::string termination_name(Termination t);
Termination parse_termination(const std::string& s);

struct FrameRecord {
  int step = 0;  // index of the frame's pose in the trace
  // Mean tile depth of the frame's observation, world units.
  Eigen::Matrix<double, sim::kGridRows, sim::kGridCols> depth;
};

struct EpisodeResult {
  // 15 fps trace, expressed with the initial pose as identity.
  std::vector<CameraPose> poses;
  // Motion executed between poses[i] and poses[i + 1].
  std::vector<CameraMotion> motions;
  std::vector<FrameRecord> frames;
  Termination terminated_by = Termination::kDuration;
  double duration_s = 0.0;
  int completed_frames = 0;
  int window_slides = 0;
  // Trace step indices where a window slide took effect.
  std::vector<int> slide_steps;
  CameraPose origin;  // initial pose in world coordinates
  std::uint64_t cond_seed = 0;
};

struct EpisodeConfig {
  double duration_s = 10.0;
  double clearance = 0.2;
  bool windowed = false;
  // 0 selects the policy's context size and half of it.
  int window_frames = 0;
  int keep_frames = 0;
};

EpisodeResult run_episode(Policy& policy, const sim::World& world, const CameraPose& init_pose,
                          std::uint64_t cond_seed, double duration_s, double clearance = 0.2);
EpisodeResult run_episode_windowed(Policy& policy, const sim::World& world, const CameraPose& init_pose,
                                   std::uint64_t cond_seed, double duration_s, int window_frames = 30,
                                   int keep_frames = 15, double clearance = 0.2);
EpisodeResult run(Policy& policy, const sim::World& world, const CameraPose& init_pose, std::uint64_t cond_seed,
                  const EpisodeConfig& cfg);

nlohmann::json episode_to_json(const EpisodeResult& e);
EpisodeResult episode_from_json(const nlohmann::json& j);
void write_episode(const std::filesystem::path& path, const EpisodeResult& e, const nlohmann::json& extra = {});
EpisodeResult read_episode(const std::filesystem::path& path);

CameraPose parse_pose(const std::string& csv);

}  // namespace dronecam::rollout
