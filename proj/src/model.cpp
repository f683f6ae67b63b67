#include "dronecam/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "dronecam/errors.hpp"

namespace dronecam::model {
using json = nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3 * 0.044715 * x * x);
}

Mat apply_gelu(const Mat& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

std::string idx(const std::string& prefix, int i) { return prefix + "." + std::to_string(i); }

Vec bias_of(const Param& p) { return p.value.row(0).transpose(); }

void linear(const ParamSet& ps, const std::string& name, const Mat& x, Mat& y) {
  kernels::linear_forward(x, ps.at(name + ".w").value, bias_of(ps.at(name + ".b")), y);
}

void linear_back(ParamSet& ps, const std::string& name, const Mat& x, const Mat& dy, Mat* dx) {
  Param& w = ps.at(name + ".w");
  Param& b = ps.at(name + ".b");
  Vec db = Vec::Zero(b.value.cols());
  kernels::linear_backward_params(x, dy, w.grad, db);
  b.grad.row(0) += db.transpose();
  if (dx) kernels::linear_backward_input(dy, w.value, *dx);
}

struct MlpTape {
  std::vector<Mat> in;   // input of each linear layer
  std::vector<Mat> pre;  // pre-activation of each hidden layer
};

Mat mlp_forward(const ParamSet& ps, const std::string& prefix, int n, const Mat& x, MlpTape* tape) {
  Mat h = x;
  for (int i = 0; i < n; ++i) {
    Mat y;
    linear(ps, idx(prefix, i), h, y);
    if (tape) tape->in.push_back(h);
    if (i + 1 < n) {
      if (tape) tape->pre.push_back(y);
      y = apply_gelu(y);
    }
    h = std::move(y);
  }
  return h;
}

Mat mlp_backward(ParamSet& ps, const std::string& prefix, int n, const Mat& dy, const MlpTape& tape) {
  Mat d = dy;
  for (int i = n - 1; i >= 0; --i) {
    Mat dx;
    linear_back(ps, idx(prefix, i), tape.in[static_cast<size_t>(i)], d, &dx);
    if (i > 0) {
      const Mat& pre = tape.pre[static_cast<size_t>(i - 1)];
      d = dx.cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
    } else {
      d = std::move(dx);
    }
  }
  return d;
}

// 3x3 'same' convolution on the 5x9 patch grid, frames stacked in blocks of 45 rows.
Mat im2col(const Mat& x) {
  const Eigen::Index c = x.cols();
  const Eigen::Index frames = x.rows() / kPatchTokens;
  Mat col = Mat::Zero(x.rows(), 9 * c);
  for (Eigen::Index f = 0; f < frames; ++f)
    for (int r = 0; r < sim::kGridRows; ++r)
      for (int q = 0; q < sim::kGridCols; ++q) {
        const Eigen::Index row = f * kPatchTokens + r * sim::kGridCols + q;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int rr = r + ky - 1, qq = q + kx - 1;
            if (rr < 0 || rr >= sim::kGridRows || qq < 0 || qq >= sim::kGridCols) continue;
            col.row(row).segment((ky * 3 + kx) * c, c) = x.row(f * kPatchTokens + rr * sim::kGridCols + qq);
          }
      }
  return col;
}

Mat col2im(const Mat& dcol, Eigen::Index c) {
  const Eigen::Index frames = dcol.rows() / kPatchTokens;
  Mat dx = Mat::Zero(dcol.rows(), c);
  for (Eigen::Index f = 0; f < frames; ++f)
    for (int r = 0; r < sim::kGridRows; ++r)
      for (int q = 0; q < sim::kGridCols; ++q) {
        const Eigen::Index row = f * kPatchTokens + r * sim::kGridCols + q;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int rr = r + ky - 1, qq = q + kx - 1;
            if (rr < 0 || rr >= sim::kGridRows || qq < 0 || qq >= sim::kGridCols) continue;
            dx.row(f * kPatchTokens + rr * sim::kGridCols + qq) += dcol.row(row).segment((ky * 3 + kx) * c, c);
          }
      }
  return dx;
}

struct ConvTape {
  std::vector<Mat> col;  // im2col of each layer's input
  std::vector<Mat> pre;  // pre-activations of layers 0 and 1
};

Mat depth_forward(const ParamSet& ps, const Mat& x, ConvTape* tape) {
  Mat h = x;
  for (int i = 0; i < 3; ++i) {
    Mat col = im2col(h);
    Mat y;
    linear(ps, idx("depth_conv", i), col, y);
    if (tape) tape->col.push_back(std::move(col));
    if (i < 2) {
      if (tape) tape->pre.push_back(y);
      y = apply_gelu(y);
    }
    h = std::move(y);
  }
  return h;
}

void depth_backward(ParamSet& ps, const Mat& dy, const ConvTape& tape, Eigen::Index in_channels,
                    Eigen::Index conv_channels) {
  Mat d = dy;
  for (int i = 2; i >= 0; --i) {
    Mat dcol;
    linear_back(ps, idx("depth_conv", i), tape.col[static_cast<size_t>(i)], d, i > 0 ? &dcol : nullptr);
    if (i == 0) break;
    const Mat dx = col2im(dcol, i == 0 ? in_channels : conv_channels);
    d = dx.cwiseProduct(tape.pre[static_cast<size_t>(i - 1)].unaryExpr([](double v) { return gelu_grad(v); }));
  }
}

Mat pose_input(const CameraPose& p, double scale) {
  Mat x(1, 7);
  x << p.position.x() / scale, p.position.y() / scale, p.position.z() / scale, p.orientation[0], p.orientation[1],
      p.orientation[2], p.orientation[3];
  return x;
}

Mat depth_input(const Eigen::Matrix<double, sim::kGridRows, sim::kGridCols>& depth) {
  Mat x(kPatchTokens, 1);
  for (int k = 0; k < kPatchTokens; ++k) {
    const double d = depth(k / sim::kGridCols, k % sim::kGridCols);
    x(k, 0) = d > 1.0 ? 10.0 / d : 10.0;
  }
  return x;
}

struct LnTape {
  Mat xhat;
  Vec rstd;
};

Mat layer_norm(const Param& g, const Param& b, const Mat& x, LnTape* tape) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat y(n, d);
  if (tape) {
    tape->xhat.resize(n, d);
    tape->rstd.resize(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = 0;
    for (Eigen::Index j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0;
    for (Eigen::Index j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mean) * rstd;
      y(i, j) = xh * g.value(0, j) + b.value(0, j);
      if (tape) tape->xhat(i, j) = xh;
    }
    if (tape) tape->rstd[i] = rstd;
  }
  return y;
}

Mat layer_norm_back(Param& g, Param& b, const Mat& dy, const LnTape& t) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m1 = 0, m2 = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * g.value(0, j);
      g.grad(0, j) += dy(i, j) * t.xhat(i, j);
      b.grad(0, j) += dy(i, j);
      m1 += dxh;
      m2 += dxh * t.xhat(i, j);
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (Eigen::Index j = 0; j < d; ++j)
      dx(i, j) = t.rstd[i] * (dy(i, j) * g.value(0, j) - m1 - t.xhat(i, j) * m2);
  }
  return dx;
}

void append_rows(Mat& dst, const Mat& rows) {
  const Eigen::Index old = dst.rows();
  if (old == 0) {
    dst = rows;
    return;
  }
  dst.conservativeResize(old + rows.rows(), Eigen::NoChange);
  dst.bottomRows(rows.rows()) = rows;
}

}  // namespace

// ---------------------------------------------------------------------------

struct EmbedTape {
  Eigen::Index p0 = 0, p1 = 0;
  // x-row of each embedded pose/action token, in MLP input order.
  std::vector<Eigen::Index> pose_rows, action_rows;
  MlpTape pose, motion, feat;
  ConvTape conv;
  // For each frame whose patches were embedded: x-row of each of its 45 slots
  // (-1 when outside the range).
  std::vector<std::array<Eigen::Index, kPatchTokens>> patch_rows;
};

struct LayerTape {
  Mat x_in;
  LnTape ln1;
  Mat a;  // ln1 output
  Mat q, k, v;
  std::vector<Mat> probs;
  Mat att;
  Mat x_mid;
  LnTape ln2;
  Mat b2;  // ln2 output
  Mat h;   // fc pre-activation
  Mat g;   // gelu(h)
};

struct ForwardTape {
  std::vector<LayerTape> layers;
  LnTape ln_f;
};

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || hidden < 2) throw std::invalid_argument("model config: sizes must be positive");
  if (hidden % 2 != 0) throw std::invalid_argument("model config: hidden must be even");
  if (hidden % heads != 0) throw std::invalid_argument("model config: hidden must be divisible by heads");
  if (max_frames != 30) throw std::invalid_argument("model config: max_frames is fixed at 30");
  if (feature_dim < 1 || conv_channels < 1 || mlp_ratio < 1) throw std::invalid_argument("model config: bad widths");
  if (context_frames < 1 || context_frames > max_frames)
    throw std::invalid_argument("model config: context_frames must be in [1, max_frames]");
  if (!(pose_position_scale > 0)) throw std::invalid_argument("model config: pose_position_scale must be positive");
}

json config_to_json(const ModelConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"hidden", c.hidden},
          {"max_frames", c.max_frames},
          {"feature_dim", c.feature_dim},
          {"conv_channels", c.conv_channels},
          {"mlp_ratio", c.mlp_ratio},
          {"seed", c.seed},
          {"use_pose_tokens", c.use_pose_tokens},
          {"use_action_tokens", c.use_action_tokens},
          {"context_frames", c.context_frames},
          {"pose_position_scale", c.pose_position_scale}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  static const std::vector<std::string> known = {"layers", "heads", "hidden", "max_frames", "feature_dim",
                                                 "conv_channels", "mlp_ratio", "seed", "use_pose_tokens",
                                                 "use_action_tokens", "context_frames", "pose_position_scale"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("model config: unknown key '" + k + "'");
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.seed = j.value("seed", c.seed);
  c.use_pose_tokens = j.value("use_pose_tokens", c.use_pose_tokens);
  c.use_action_tokens = j.value("use_action_tokens", c.use_action_tokens);
  c.context_frames = j.value("context_frames", c.context_frames);
  c.pose_position_scale = j.value("pose_position_scale", c.pose_position_scale);
  c.validate();
  return c;
}

Param& ParamSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = list_.size();
  list_.push_back({name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
  return list_.back();
}

Param& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return list_[it->second];
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return list_[it->second];
}

size_t ParamSet::count() const {
  size_t n = 0;
  for (const auto& p : list_) n += static_cast<size_t>(p.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : list_) p.grad.setZero();
}

std::vector<TokenPosition> token_layout(int frames) {
  std::vector<TokenPosition> out;
  out.push_back({0, kCondSlot});
  for (int f = 0; f < frames; ++f)
    for (int s = 0; s < kTokensPerFrame; ++s) out.push_back({f, s});
  return out;
}

TokenPosition position_of(int index) {
  if (index < 0) throw std::invalid_argument("negative token index");
  if (index == 0) return {0, kCondSlot};
  return {(index - 1) / kTokensPerFrame, (index - 1) % kTokensPerFrame};
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.hidden, c = cfg_.conv_channels;
  auto add_linear = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w", in, out);
    params_.add(name + ".b", 1, out);
  };
  add_linear("pose_mlp.0", 7, d);
  add_linear("pose_mlp.1", d, d);
  add_linear("pose_mlp.2", d, d);
  add_linear("motion_mlp.0", 6, d);
  add_linear("motion_mlp.1", d, d);
  add_linear("motion_mlp.2", d, d);
  add_linear("feat_proj.0", cfg_.feature_dim, d);
  add_linear("feat_proj.1", d, d);
  add_linear("depth_conv.0", 9, c);
  add_linear("depth_conv.1", 9 * c, c);
  add_linear("depth_conv.2", 9 * c, d);
  params_.add("boa", 1, d);
  params_.add("cond_pe", 1, d);
  params_.add("frame_pe", cfg_.max_frames, d / 2);
  params_.add("slot_pe", kTokensPerFrame, d / 2);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l);
    params_.add(p + ".ln1.g", 1, d);
    params_.add(p + ".ln1.b", 1, d);
    add_linear(p + ".attn.qkv", d, 3 * d);
    add_linear(p + ".attn.proj", d, d);
    params_.add(p + ".ln2.g", 1, d);
    params_.add(p + ".ln2.b", 1, d);
    add_linear(p + ".mlp.fc", d, cfg_.mlp_ratio * d);
    add_linear(p + ".mlp.proj", cfg_.mlp_ratio * d, d);
  }
  params_.add("ln_f.g", 1, d);
  params_.add("ln_f.b", 1, d);
  add_linear("head", d, 6);
  init_params();
}

void Model::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  auto fill = [&](Param& p, double std) {
    std::normal_distribution<double> n(0.0, std);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  };
  const double resid = 0.02 / std::sqrt(2.0 * cfg_.layers);
  for (auto& p : params_.list()) {
    const std::string& n = p.name;
    const bool is_bias = n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0;
    if (n.find(".ln") != std::string::npos || n.rfind("ln_f", 0) == 0) {
      if (!is_bias) p.value.setOnes();
    } else if (is_bias) {
      // zero
    } else if (n.rfind("pose_mlp", 0) == 0 || n.rfind("motion_mlp", 0) == 0 || n.rfind("feat_proj", 0) == 0 ||
               n.rfind("depth_conv", 0) == 0) {
      fill(p, 1.0 / std::sqrt(static_cast<double>(p.value.rows())));
    } else if (n.find("attn.proj") != std::string::npos || n.find("mlp.proj") != std::string::npos) {
      fill(p, resid);
    } else {
      fill(p, 0.02);
    }
  }
}

Vec Model::embed_pose(const CameraPose& pose) const {
  return mlp_forward(params_, "pose_mlp", 3, pose_input(pose, cfg_.pose_position_scale), nullptr).row(0).transpose();
}

Vec Model::embed_motion(const Vec6& a) const {
  Mat x(1, 6);
  x.row(0) = a.transpose();
  return mlp_forward(params_, "motion_mlp", 3, x, nullptr).row(0).transpose();
}

Mat Model::embed_patches(const Eigen::MatrixXd& features,
                         const Eigen::Matrix<double, sim::kGridRows, sim::kGridCols>& depth) const {
  if (features.rows() != kPatchTokens || features.cols() != cfg_.feature_dim)
    throw std::invalid_argument("embed_patches: features must be 45 x feature_dim");
  const Mat f = features;
  return mlp_forward(params_, "feat_proj", 2, f, nullptr) + depth_forward(params_, depth_input(depth), nullptr);
}

Vec Model::positional_embedding(int frame, int slot) const {
  if (frame < 0 || frame >= cfg_.max_frames || slot < 0 || slot >= kTokensPerFrame)
    throw std::invalid_argument("positional_embedding: index out of range");
  const int h = cfg_.hidden / 2;
  Vec pe(cfg_.hidden);
  pe.head(h) = params_.at("frame_pe").value.row(frame).transpose();
  pe.tail(h) = params_.at("slot_pe").value.row(slot).transpose();
  return pe;
}

Mat Model::embed(const SequenceInput& seq, Eigen::Index p0, Eigen::Index p1, EmbedTape* tape) const {
  const int d = cfg_.hidden, h = d / 2;
  if (p1 < p0 || p0 < 0) throw std::invalid_argument("embed: bad token range");
  if (p1 > cfg_.max_tokens()) throw ContextOverflow("embed: sequence longer than 1 + 52 * 30 tokens");
  Mat x = Mat::Zero(p1 - p0, d);
  const Param& frame_pe = params_.at("frame_pe");
  const Param& slot_pe = params_.at("slot_pe");

  std::vector<Eigen::Index> pose_rows, action_rows;
  Mat pose_in(0, 7), action_in(0, 6);
  std::vector<int> patch_frames;
  std::vector<std::array<Eigen::Index, kPatchTokens>> patch_rows;

  for (Eigen::Index p = p0; p < p1; ++p) {
    const Eigen::Index r = p - p0;
    if (p == 0) {
      if (seq.cond.size() != d) throw std::invalid_argument("embed: cond must have hidden size");
      x.row(r) = seq.cond.transpose() + params_.at("cond_pe").value.row(0);
      continue;
    }
    const TokenPosition tp = position_of(static_cast<int>(p));
    if (tp.frame >= static_cast<int>(seq.frames.size())) throw std::invalid_argument("embed: token past last frame");
    x.row(r).head(h) = frame_pe.value.row(tp.frame);
    x.row(r).tail(h) = slot_pe.value.row(tp.slot);
    if (tp.slot == kPoseSlot) {
      if (cfg_.use_pose_tokens) {
        pose_rows.push_back(r);
        append_rows(pose_in, pose_input(seq.frames[static_cast<size_t>(tp.frame)].pose, cfg_.pose_position_scale));
      }
    } else if (tp.slot < kBoaSlot) {
      if (patch_frames.empty() || patch_frames.back() != tp.frame) {
        patch_frames.push_back(tp.frame);
        std::array<Eigen::Index, kPatchTokens> rows;
        rows.fill(-1);
        patch_rows.push_back(rows);
      }
      patch_rows.back()[static_cast<size_t>(tp.slot - kFirstPatchSlot)] = r;
    } else if (tp.slot == kBoaSlot) {
      x.row(r) += params_.at("boa").value.row(0);
    } else {
      const int k = tp.slot - kFirstActionSlot;
      const auto& acts = seq.actions.at(static_cast<size_t>(tp.frame));
      if (k >= static_cast<int>(acts.size())) throw std::invalid_argument("embed: action token without action");
      if (cfg_.use_action_tokens) {
        action_rows.push_back(r);
        Mat a(1, 6);
        a.row(0) = acts[static_cast<size_t>(k)].transpose();
        append_rows(action_in, a);
      }
    }
  }

  if (!pose_rows.empty()) {
    const Mat e = mlp_forward(params_, "pose_mlp", 3, pose_in, tape ? &tape->pose : nullptr);
    for (size_t i = 0; i < pose_rows.size(); ++i) x.row(pose_rows[i]) += e.row(static_cast<Eigen::Index>(i));
  }
  if (!action_rows.empty()) {
    const Mat e = mlp_forward(params_, "motion_mlp", 3, action_in, tape ? &tape->motion : nullptr);
    for (size_t i = 0; i < action_rows.size(); ++i) x.row(action_rows[i]) += e.row(static_cast<Eigen::Index>(i));
  }
  if (!patch_frames.empty()) {
    const Eigen::Index nf = static_cast<Eigen::Index>(patch_frames.size());
    Mat feats(nf * kPatchTokens, cfg_.feature_dim), depth(nf * kPatchTokens, 1);
    for (Eigen::Index f = 0; f < nf; ++f) {
      const FrameInput& fi = seq.frames[static_cast<size_t>(patch_frames[static_cast<size_t>(f)])];
      if (fi.features.rows() != kPatchTokens || fi.features.cols() != cfg_.feature_dim)
        throw std::invalid_argument("embed: frame features must be 45 x feature_dim");
      feats.middleRows(f * kPatchTokens, kPatchTokens) = fi.features;
      depth.middleRows(f * kPatchTokens, kPatchTokens) = depth_input(fi.depth);
    }
    const Mat e = mlp_forward(params_, "feat_proj", 2, feats, tape ? &tape->feat : nullptr) +
                  depth_forward(params_, depth, tape ? &tape->conv : nullptr);
    for (Eigen::Index f = 0; f < nf; ++f)
      for (int s = 0; s < kPatchTokens; ++s) {
        const Eigen::Index r = patch_rows[static_cast<size_t>(f)][static_cast<size_t>(s)];
        if (r >= 0) x.row(r) += e.row(f * kPatchTokens + s);
      }
  }
  if (tape) {
    tape->p0 = p0;
    tape->p1 = p1;
    tape->pose_rows = std::move(pose_rows);
    tape->action_rows = std::move(action_rows);
    tape->patch_rows = std::move(patch_rows);
  }
  return x;
}

Mat Model::extend(const Mat& x_new, KvCache& cache, ForwardTape* tape,
                  std::vector<std::vector<Mat>>* attention) const {
  const int d = cfg_.hidden;
  if (x_new.cols() != d) throw std::invalid_argument("extend: rows must have hidden width");
  const Eigen::Index start = cache.length();
  if (start + x_new.rows() > cfg_.max_tokens()) throw ContextOverflow("extend: context longer than 1 + 52 * 30 tokens");
  if (cache.k.empty()) {
    cache.k.assign(static_cast<size_t>(cfg_.layers), Mat(0, d));
    cache.v.assign(static_cast<size_t>(cfg_.layers), Mat(0, d));
  }
  if (tape) tape->layers.resize(static_cast<size_t>(cfg_.layers));
  if (attention) attention->assign(static_cast<size_t>(cfg_.layers), {});
  Mat x = x_new;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l);
    LayerTape* lt = tape ? &tape->layers[static_cast<size_t>(l)] : nullptr;
    if (lt) lt->x_in = x;
    LnTape ln1;
    const Mat a = layer_norm(params_.at(p + ".ln1.g"), params_.at(p + ".ln1.b"), x, lt ? &ln1 : nullptr);
    Mat qkv;
    linear(params_, p + ".attn.qkv", a, qkv);
    Mat q = qkv.leftCols(d), k = qkv.middleCols(d, d), v = qkv.rightCols(d);
    append_rows(cache.k[static_cast<size_t>(l)], k);
    append_rows(cache.v[static_cast<size_t>(l)], v);
    std::vector<Mat> probs;
    const bool want_probs = lt || attention;
    Mat att;
    kernels::attention_forward(q, cache.k[static_cast<size_t>(l)], cache.v[static_cast<size_t>(l)], start,
                               cfg_.heads, att, want_probs ? &probs : nullptr);
    Mat y;
    linear(params_, p + ".attn.proj", att, y);
    Mat x_mid = x + y;
    LnTape ln2;
    const Mat b2 = layer_norm(params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"), x_mid, lt ? &ln2 : nullptr);
    Mat h;
    linear(params_, p + ".mlp.fc", b2, h);
    Mat g = apply_gelu(h);
    Mat y2;
    linear(params_, p + ".mlp.proj", g, y2);
    x = x_mid + y2;
    if (attention) (*attention)[static_cast<size_t>(l)] = probs;
    if (lt) {
      lt->ln1 = std::move(ln1);
      lt->a = a;
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->probs = std::move(probs);
      lt->att = std::move(att);
      lt->x_mid = std::move(x_mid);
      lt->ln2 = std::move(ln2);
      lt->b2 = b2;
      lt->h = std::move(h);
      lt->g = std::move(g);
    }
  }
  return layer_norm(params_.at("ln_f.g"), params_.at("ln_f.b"), x, tape ? &tape->ln_f : nullptr);
}

Mat Model::forward(const SequenceInput& seq, std::vector<std::vector<Mat>>* attention) const {
  KvCache cache;
  const Eigen::Index n = 1 + kTokensPerFrame * static_cast<Eigen::Index>(seq.frames.size());
  return extend(embed(seq, 0, n), cache, nullptr, attention);
}

Vec6 Model::head(const Vec& hidden_row) const {
  Mat x(1, cfg_.hidden), y;
  x.row(0) = hidden_row.transpose();
  linear(params_, "head", x, y);
  return y.row(0).transpose();
}

Mat Model::predict_actions(const Mat& hidden, int frame) const {
  const Eigen::Index first = 1 + static_cast<Eigen::Index>(frame) * kTokensPerFrame + kBoaSlot;
  if (frame < 0 || first + kSubsteps - 1 >= hidden.rows())
    throw std::invalid_argument("predict_actions: frame not covered by hidden states");
  Mat rows = hidden.middleRows(first, kSubsteps), y;
  linear(params_, "head", rows, y);
  return y;
}

void Model::backward(const SequenceInput& seq, const EmbedTape& et, const ForwardTape& ft, const Mat& dhidden) {
  const int d = cfg_.hidden, hh = d / 2;
  Mat dx = layer_norm_back(params_.at("ln_f.g"), params_.at("ln_f.b"), dhidden, ft.ln_f);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const std::string p = "blocks." + std::to_string(l);
    const LayerTape& lt = ft.layers[static_cast<size_t>(l)];
    Mat dg;
    linear_back(params_, p + ".mlp.proj", lt.g, dx, &dg);
    const Mat dh = dg.cwiseProduct(lt.h.unaryExpr([](double v) { return gelu_grad(v); }));
    Mat db2;
    linear_back(params_, p + ".mlp.fc", lt.b2, dh, &db2);
    const Mat dx_mid = dx + layer_norm_back(params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"), db2, lt.ln2);
    Mat datt;
    linear_back(params_, p + ".attn.proj", lt.att, dx_mid, &datt);
    Mat dq, dk = Mat::Zero(lt.k.rows(), d), dv = Mat::Zero(lt.v.rows(), d);
    kernels::attention_backward(datt, lt.q, lt.k, lt.v, lt.probs, 0, cfg_.heads, dq, dk, dv);
    Mat dqkv(dq.rows(), 3 * d);
    dqkv << dq, dk, dv;
    Mat da;
    linear_back(params_, p + ".attn.qkv", lt.a, dqkv, &da);
    dx = dx_mid + layer_norm_back(params_.at(p + ".ln1.g"), params_.at(p + ".ln1.b"), da, lt.ln1);
  }

  // Embedding gradients.
  Param& frame_pe = params_.at("frame_pe");
  Param& slot_pe = params_.at("slot_pe");
  for (Eigen::Index p = et.p0; p < et.p1; ++p) {
    const Eigen::Index r = p - et.p0;
    if (p == 0) {
      params_.at("cond_pe").grad.row(0) += dx.row(r);
      continue;
    }
    const TokenPosition tp = position_of(static_cast<int>(p));
    frame_pe.grad.row(tp.frame) += dx.row(r).head(hh);
    slot_pe.grad.row(tp.slot) += dx.row(r).tail(hh);
    if (tp.slot == kBoaSlot) params_.at("boa").grad.row(0) += dx.row(r);
  }
  if (!et.pose_rows.empty()) {
    Mat dy(static_cast<Eigen::Index>(et.pose_rows.size()), d);
    for (size_t i = 0; i < et.pose_rows.size(); ++i) dy.row(static_cast<Eigen::Index>(i)) = dx.row(et.pose_rows[i]);
    mlp_backward(params_, "pose_mlp", 3, dy, et.pose);
  }
  if (!et.action_rows.empty()) {
    Mat dy(static_cast<Eigen::Index>(et.action_rows.size()), d);
    for (size_t i = 0; i < et.action_rows.size(); ++i) dy.row(static_cast<Eigen::Index>(i)) = dx.row(et.action_rows[i]);
    mlp_backward(params_, "motion_mlp", 3, dy, et.motion);
  }
  if (!et.patch_rows.empty()) {
    const Eigen::Index nf = static_cast<Eigen::Index>(et.patch_rows.size());
    Mat dy = Mat::Zero(nf * kPatchTokens, d);
    for (Eigen::Index f = 0; f < nf; ++f)
      for (int s = 0; s < kPatchTokens; ++s) {
        const Eigen::Index r = et.patch_rows[static_cast<size_t>(f)][static_cast<size_t>(s)];
        if (r >= 0) dy.row(f * kPatchTokens + s) = dx.row(r);
      }
    mlp_backward(params_, "feat_proj", 2, dy, et.feat);
    depth_backward(params_, dy, et.conv, 1, cfg_.conv_channels);
  }
  (void)seq;
}

Model::LossResult Model::loss(const std::vector<Target>& batch, bool grad) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  LossResult res;
  for (const auto& t : batch)
    for (const auto& v : t.valid)
      for (bool b : v) res.count += b ? 6.0 : 0.0;
  if (res.count == 0) throw std::invalid_argument("loss: batch has no valid targets");
  for (const auto& t : batch) {
    const SequenceInput& seq = t.input;
    const int frames = static_cast<int>(seq.frames.size());
    if (frames == 0) throw std::invalid_argument("loss: empty sequence");
    if (static_cast<int>(t.valid.size()) != frames || static_cast<int>(seq.actions.size()) != frames)
      throw std::invalid_argument("loss: actions/validity must cover every frame");
    const Eigen::Index n = 1 + kTokensPerFrame * static_cast<Eigen::Index>(frames);
    EmbedTape et;
    ForwardTape ft;
    KvCache cache;
    const Mat x = embed(seq, 0, n, grad ? &et : nullptr);
    const Mat hidden = extend(x, cache, grad ? &ft : nullptr);
    Mat rows(static_cast<Eigen::Index>(frames) * kSubsteps, cfg_.hidden);
    for (int f = 0; f < frames; ++f)
      rows.middleRows(static_cast<Eigen::Index>(f) * kSubsteps, kSubsteps) =
          hidden.middleRows(1 + static_cast<Eigen::Index>(f) * kTokensPerFrame + kBoaSlot, kSubsteps);
    Mat pred;
    linear(params_, "head", rows, pred);
    Mat dpred = Mat::Zero(pred.rows(), 6);
    for (int f = 0; f < frames; ++f)
      for (int k = 0; k < kSubsteps; ++k) {
        if (!t.valid[static_cast<size_t>(f)][static_cast<size_t>(k)]) continue;
        const Vec6& target = seq.actions[static_cast<size_t>(f)].at(static_cast<size_t>(k));
        const Eigen::Index r = static_cast<Eigen::Index>(f) * kSubsteps + k;
        for (int c = 0; c < 6; ++c) {
          const double e = pred(r, c) - target[c];
          res.abs_sum += std::abs(e);
          dpred(r, c) = (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0)) / res.count;
        }
      }
    if (!grad) continue;
    Mat drows;
    linear_back(params_, "head", rows, dpred, &drows);
    Mat dhidden = Mat::Zero(hidden.rows(), cfg_.hidden);
    for (int f = 0; f < frames; ++f)
      dhidden.middleRows(1 + static_cast<Eigen::Index>(f) * kTokensPerFrame + kBoaSlot, kSubsteps) =
          drows.middleRows(static_cast<Eigen::Index>(f) * kSubsteps, kSubsteps);
    backward(seq, et, ft, dhidden);
  }
  res.loss = res.abs_sum / res.count;
  return res;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'D', 'C', 'A', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void Model::save(const std::filesystem::path& path, const data::MotionStats& stats) const {
  json manifest = json::array();
  for (const auto& p : params_.list()) manifest.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}});
  const std::string header =
      json{{"config", config_to_json(cfg_)}, {"stats", data::stats_to_json(stats)}, {"tensors", manifest}}.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : params_.list())
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Model Model::load(const std::filesystem::path& path, data::MotionStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version in " + path.string());
  if (len > (1u << 26)) throw std::runtime_error("corrupt checkpoint header in " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  const json h = json::parse(header);
  Model m(config_from_json(h.at("config")));
  if (stats) *stats = data::stats_from_json(h.at("stats"));
  const auto& tensors = h.at("tensors");
  if (tensors.size() != m.params_.list().size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (size_t i = 0; i < tensors.size(); ++i) {
    Param& p = m.params_.list()[i];
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != p.name || t.at("shape").at(0).get<Eigen::Index>() != p.value.rows() ||
        t.at("shape").at(1).get<Eigen::Index>() != p.value.cols())
      throw std::runtime_error("checkpoint tensor mismatch at " + p.name);
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
  return m;
}

// ---------------------------------------------------------------------------

Vec sample_cond(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v;
}

FrameInput frame_input(const data::FrameSample& f) {
  return {f.pose, f.features, f.depth};
}

Model::Target make_target(const data::TrainingSequence& seq, const data::MotionStats& stats, const Vec& cond) {
  Model::Target t;
  t.input.cond = cond;
  for (const auto& f : seq.frames) {
    t.input.frames.push_back(frame_input(f));
    std::vector<Vec6> acts;
    for (const auto& a : f.actions) acts.push_back(data::normalize_motion(a, stats));
    t.input.actions.push_back(std::move(acts));
    t.valid.push_back(f.action_valid);
  }
  return t;
}

Session::Session(const Model& model, const Vec& cond) : model_(&model) {
  seq_.cond = cond;
  model_->extend(model_->embed(seq_, 0, 1), cache_);
}

Vec6 Session::begin_frame(const FrameInput& frame) {
  if (frames() >= model_->config().max_frames) throw ContextOverflow("session: more than 30 frames");
  if (frames() > 0 && seq_.actions.back().size() != kSubsteps)
    throw std::logic_error("session: previous frame has unfinished actions");
  seq_.frames.push_back(frame);
  seq_.actions.emplace_back();
  const Eigen::Index p0 = 1 + static_cast<Eigen::Index>(frames() - 1) * kTokensPerFrame;
  const Mat h = model_->extend(model_->embed(seq_, p0, p0 + kBoaSlot + 1), cache_);
  return model_->head(h.bottomRows(1).row(0).transpose());
}

Vec6 Session::push_action(const Vec6& a) {
  if (frames() == 0 || seq_.actions.back().size() >= kSubsteps) throw std::logic_error("session: no open action slot");
  seq_.actions.back().push_back(a);
  const Eigen::Index p = 1 + static_cast<Eigen::Index>(frames() - 1) * kTokensPerFrame + kFirstActionSlot +
                         static_cast<Eigen::Index>(seq_.actions.back().size()) - 1;
  const Mat h = model_->extend(model_->embed(seq_, p, p + 1), cache_);
  return model_->head(h.row(0).transpose());
}

}  // namespace dronecam::model
