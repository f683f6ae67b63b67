#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "dronecam/dataset.hpp"
#include "dronecam/kernels.hpp"
#include "dronecam/simworld.hpp"

namespace dronecam::model {

using data::Vec6;
using geo::CameraPose;

inline constexpr int kPatchTokens = sim::kGridCells;        // 45
inline constexpr int kSubsteps = data::kSubsteps;           // 5
inline constexpr int kPoseSlot = 0;
inline constexpr int kFirstPatchSlot = 1;
inline constexpr int kBoaSlot = 1 + kPatchTokens;           // 46
inline constexpr int kFirstActionSlot = kBoaSlot + 1;       // 47
inline constexpr int kTokensPerFrame = kFirstActionSlot + kSubsteps;  // 52
// The <Cond> token sits outside the per-frame slots.
inline constexpr int kCondSlot = kTokensPerFrame;

struct ModelConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 128;
  int max_frames = 30;
  int feature_dim = 32;
  int conv_channels = 32;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;
  // Ablation switches: a disabled token kind is embedded as zeros (plus its
  // positional embedding).
  bool use_pose_tokens = true;
  bool use_action_tokens = true;
  // Frames the model sees at once, both in training crops and in rollout.
  int context_frames = 30;
  double pose_position_scale = 50.0;

  int tokens_per_frame() const { return kTokensPerFrame; }
  int max_tokens() const { return 1 + kTokensPerFrame * max_frames; }
  void validate() const;
};

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

struct Param {
  std::string name;
  Mat value;
  Mat grad;
};

class ParamSet {
 public:
  Param& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  std::vector<Param>& list() { return list_; }
  const std::vector<Param>& list() const { return list_; }
  size_t count() const;
  void zero_grad();

 private:
  std::vector<Param> list_;
  std::map<std::string, size_t> index_;
};

// Normalized observation for one 3 fps frame.
struct FrameInput {
  CameraPose pose;
  Eigen::MatrixXd features;  // 45 x F
  Eigen::Matrix<double, sim::kGridRows, sim::kGridCols> depth;
};

struct SequenceInput {
  Vec cond;
  std::vector<FrameInput> frames;
  // Normalized actions; the last frame may carry fewer than 5 when decoding.
  std::vector<std::vector<Vec6>> actions;
};

struct TokenPosition {
  int frame;
  int slot;
};

// Frame/slot of every token for a T-frame sequence: <Cond> first (frame 0,
// slot kCondSlot), then 52 slots per frame.
std::vector<TokenPosition> token_layout(int frames);
TokenPosition position_of(int index);

struct EmbedTape;
struct BlockTape;

struct KvCache {
  std::vector<Mat> k, v;  // per layer, rows = cached tokens
  Eigen::Index length() const { return k.empty() ? 0 : k.front().rows(); }
  void clear() { k.clear(); v.clear(); }
};

struct ForwardTape;

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  size_t parameter_count() const { return params_.count(); }

  Vec embed_pose(const CameraPose& pose) const;
  Vec embed_motion(const Vec6& a_normalized) const;
  Mat embed_patches(const Eigen::MatrixXd& features,
                    const Eigen::Matrix<double, sim::kGridRows, sim::kGridCols>& depth) const;
  Vec positional_embedding(int frame, int slot) const;

  // Embeddings of tokens [p0, p1) of `seq`, including positional terms.
  Mat embed(const SequenceInput& seq, Eigen::Index p0, Eigen::Index p1, EmbedTape* tape = nullptr) const;
  // Runs the decoder over new rows x appended after the cached ones. Returns
  // final-norm hidden states of the new rows.
  Mat extend(const Mat& x, KvCache& cache, ForwardTape* tape = nullptr,
             std::vector<std::vector<Mat>>* attention = nullptr) const;
  // Hidden states of every token of seq (fresh cache).
  Mat forward(const SequenceInput& seq, std::vector<std::vector<Mat>>* attention = nullptr) const;

  // Hidden rows of the prediction positions (<BoA> and action tokens 0..3)
  // of frame t mapped through the action head: 5 x 6.
  Mat predict_actions(const Mat& hidden, int frame) const;
  Vec6 head(const Vec& hidden_row) const;

  // Teacher-forced L1 over a batch; gradients are accumulated into params
  // when `grad` is true. Targets are actions[t][k] where valid[t][k].
  struct Target {
    SequenceInput input;
    std::vector<std::array<bool, kSubsteps>> valid;
  };
  struct LossResult {
    double loss = 0.0;
    double abs_sum = 0.0;
    double count = 0.0;
  };
  LossResult loss(const std::vector<Target>& batch, bool grad);

  void save(const std::filesystem::path& path, const data::MotionStats& stats) const;
  static Model load(const std::filesystem::path& path, data::MotionStats* stats = nullptr);

 private:
  ModelConfig cfg_;
  ParamSet params_;
  void init_params();
  void backward(const SequenceInput& seq, const EmbedTape& et, const ForwardTape& ft, const Mat& dhidden);
};

Vec sample_cond(std::uint64_t seed, int dim);

// Builds a model input from a normalized training sequence.
Model::Target make_target(const data::TrainingSequence& seq, const data::MotionStats& stats, const Vec& cond);
FrameInput frame_input(const data::FrameSample& f);

// Incremental decoding with a KV cache.
class Session {
 public:
  Session(const Model& model, const Vec& cond);
  const Model& model() const { return *model_; }
  int frames() const { return static_cast<int>(seq_.frames.size()); }
  const SequenceInput& sequence() const { return seq_; }
  // Appends pose, patch and <BoA> tokens of a new frame; returns a^0 prediction.
  Vec6 begin_frame(const FrameInput& frame);
  // Appends action token k of the current frame; returns the prediction for
  // k + 1 (meaningless for the last sub-step).
  Vec6 push_action(const Vec6& a_normalized);

 private:
  const Model* model_;
  SequenceInput seq_;
  KvCache cache_;
};

}  // namespace dronecam::model
