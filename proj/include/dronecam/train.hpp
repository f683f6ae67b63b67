#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dronecam/dataset.hpp"
#include "dronecam/model.hpp"

namespace dronecam::model {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
};

class Adam {
 public:
  Adam(const ParamSet& params, const AdamConfig& cfg);
  // Applies one update from the accumulated gradients; returns the gradient
  // norm before clipping.
  double step(ParamSet& params, double lr);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 1;
  AdamConfig adam;
  // Linear warmup then cosine decay to lr * min_lr_ratio.
  int warmup = 50;
  double min_lr_ratio = 0.1;
  // Training crops: length drawn uniformly from [min_crop, context_frames],
  // start uniform; crops are re-based so their first frame is identity.
  int min_crop = 1;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;
};

// Keys: steps, batch_size, lr, clip_norm, warmup, min_lr_ratio, min_crop,
// flip_prob, seed. Unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json train_config_to_json(const TrainConfig& c);

struct StepLog {
  int step;
  double loss;
  double lr;
  double grad_norm;
};

// Re-expresses frames [start, start + len) so the first one is identity.
data::TrainingSequence crop(const data::TrainingSequence& seq, int start, int len);

// Trains in place. Each batch item gets a fresh cond vector.
std::vector<StepLog> train(Model& model, const std::vector<data::TrainingSequence>& corpus,
                           const data::MotionStats& stats, const TrainConfig& cfg,
                           const std::function<void(const StepLog&)>& on_step = {});

// Mean teacher-forced L1 over whole sequences (cropped to the model context),
// with cond vectors drawn from `seed`.
double evaluate_l1(Model& model, const std::vector<data::TrainingSequence>& corpus, const data::MotionStats& stats,
                   std::uint64_t seed = 12345);

// L1 of always predicting the corpus-mean motion, i.e. zero in normalized space.
double constant_mean_l1(const std::vector<data::TrainingSequence>& corpus, const data::MotionStats& stats);

}  // namespace dronecam::model
