#include "dronecam/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dronecam::model {

Adam::Adam(const ParamSet& params, const AdamConfig& cfg) : cfg_(cfg) {
  for (const auto& p : params.list()) {
    m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  }
}

double Adam::step(ParamSet& params, double lr) {
  auto& list = params.list();
  if (list.size() != m_.size()) throw std::logic_error("adam: parameter set changed");
  double sq = 0;
  for (const auto& p : list) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  const double scale = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < list.size(); ++i) {
    Mat& w = list[i].value;
    const Mat& g = list[i].grad;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double gj = g.data()[j] * scale;
      double& m = m_[i].data()[j];
      double& v = v_[i].data()[j];
      m = cfg_.beta1 * m + (1 - cfg_.beta1) * gj;
      v = cfg_.beta2 * v + (1 - cfg_.beta2) * gj * gj;
      w.data()[j] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
    }
  }
  return norm;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  static const std::vector<std::string> known = {"steps", "batch_size", "lr", "clip_norm", "warmup",
                                                 "min_lr_ratio", "min_crop", "flip_prob", "seed"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("train config: unknown key '" + k + "'");
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.clip_norm = j.value("clip_norm", c.adam.clip_norm);
  c.warmup = j.value("warmup", c.warmup);
  c.min_lr_ratio = j.value("min_lr_ratio", c.min_lr_ratio);
  c.min_crop = j.value("min_crop", c.min_crop);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.seed = j.value("seed", c.seed);
  if (c.steps < 0 || c.batch_size < 1 || !(c.adam.lr > 0) || c.warmup < 0 || c.flip_prob < 0 || c.flip_prob > 1)
    throw std::invalid_argument("train config: out-of-range value");
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"steps", c.steps},       {"batch_size", c.batch_size},     {"lr", c.adam.lr},
          {"clip_norm", c.adam.clip_norm}, {"warmup", c.warmup},    {"min_lr_ratio", c.min_lr_ratio},
          {"min_crop", c.min_crop}, {"flip_prob", c.flip_prob},       {"seed", c.seed}};
}

data::TrainingSequence crop(const data::TrainingSequence& seq, int start, int len) {
  if (start < 0 || len < 1 || start + len > static_cast<int>(seq.frames.size()))
    throw std::invalid_argument("crop: range outside sequence");
  data::TrainingSequence out;
  out.clip_id = seq.clip_id;
  const geo::CameraPose origin = seq.frames[static_cast<size_t>(start)].pose;
  for (int t = start; t < start + len; ++t) {
    data::FrameSample f = seq.frames[static_cast<size_t>(t)];
    f.pose = geo::relative(origin, f.pose);
    out.frames.push_back(std::move(f));
  }
  return out;
}

std::vector<StepLog> train(Model& model, const std::vector<data::TrainingSequence>& corpus,
                           const data::MotionStats& stats, const TrainConfig& cfg,
                           const std::function<void(const StepLog&)>& on_step) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw std::invalid_argument("train: steps >= 0 and batch_size >= 1 required");
  const int ctx = model.config().context_frames;
  const int min_crop = std::clamp(cfg.min_crop, 1, ctx);
  std::mt19937_64 rng(cfg.seed);
  Adam opt(model.params(), cfg.adam);
  std::vector<StepLog> log;
  std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Model::Target> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& seq = corpus[pick(rng)];
      const int n = static_cast<int>(seq.frames.size());
      const int hi = std::min(ctx, n);
      const int len = std::uniform_int_distribution<int>(std::min(min_crop, hi), hi)(rng);
      const int start = std::uniform_int_distribution<int>(0, n - len)(rng);
      const auto cropped = data::maybe_flip(crop(seq, start, len), cfg.flip_prob, rng);
      batch.push_back(make_target(cropped, stats, sample_cond(rng(), model.config().hidden)));
    }
    double lr = cfg.adam.lr;
    if (step < cfg.warmup) {
      lr *= static_cast<double>(step + 1) / cfg.warmup;
    } else if (cfg.steps > cfg.warmup) {
      const double p = static_cast<double>(step - cfg.warmup) / std::max(1, cfg.steps - cfg.warmup);
      lr *= cfg.min_lr_ratio + (1 - cfg.min_lr_ratio) * 0.5 * (1 + std::cos(M_PI * p));
    }
    model.params().zero_grad();
    const auto res = model.loss(batch, true);
    const double gn = opt.step(model.params(), lr);
    StepLog s{step, res.loss, lr, gn};
    log.push_back(s);
    if (on_step) on_step(s);
  }
  return log;
}

double evaluate_l1(Model& model, const std::vector<data::TrainingSequence>& corpus, const data::MotionStats& stats,
                   std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("evaluate_l1: empty corpus");
  const int ctx = model.config().context_frames;
  std::mt19937_64 rng(seed);
  double abs_sum = 0, count = 0;
  for (const auto& seq : corpus) {
    const int n = static_cast<int>(seq.frames.size());
    for (int s = 0; s < n; s += ctx) {
      const auto c = crop(seq, s, std::min(ctx, n - s));
      const auto r = model.loss({make_target(c, stats, sample_cond(rng(), model.config().hidden))}, false);
      abs_sum += r.abs_sum;
      count += r.count;
    }
  }
  return abs_sum / count;
}

double constant_mean_l1(const std::vector<data::TrainingSequence>& corpus, const data::MotionStats& stats) {
  double abs_sum = 0, count = 0;
  for (const auto& seq : corpus)
    for (const auto& f : seq.frames)
      for (int k = 0; k < data::kSubsteps; ++k) {
        if (!f.action_valid[static_cast<size_t>(k)]) continue;
        abs_sum += data::normalize_motion(f.actions[static_cast<size_t>(k)], stats).cwiseAbs().sum();
        count += 6;
      }
  if (count == 0) throw std::invalid_argument("constant_mean_l1: no targets");
  return abs_sum / count;
}

}  // namespace dronecam::model
