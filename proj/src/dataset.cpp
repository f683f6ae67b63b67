#include "dronecam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>

#include "dronecam/errors.hpp"

namespace dronecam::data {
namespace fs = std::filesystem;
using json = nlohmann::json;
using geo::Quat;
using geo::Vec3;

Vec6 to_vec(const CameraMotion& m) {
  Vec6 v;
  v << m.linear, m.angular;
  return v;
}

CameraMotion from_vec(const Vec6& v) {
  CameraMotion m;
  m.linear = v.head<3>();
  m.angular = v.tail<3>();
  return m;
}

TrainingSequence chunk_actions(const traj::Clip& clip) {
  const size_t n = clip.poses.size();
  if (n < static_cast<size_t>(kSubsteps)) throw TooShort("chunk_actions: clip " + clip.id + " has fewer than 5 frames");
  const double dt = 1.0 / clip.fps;
  const size_t frames = std::min<size_t>(n / kSubsteps, kMaxFrames);
  TrainingSequence seq;
  seq.clip_id = clip.id;
  const CameraPose& origin = clip.poses[0];
  for (size_t t = 0; t < frames; ++t) {
    FrameSample f;
    if (t > 0) f.pose = geo::relative(origin, clip.poses[kSubsteps * t]);
    for (int k = 0; k < kSubsteps; ++k) {
      const size_t i = kSubsteps * t + static_cast<size_t>(k);
      if (i + 1 < n) {
        f.actions[static_cast<size_t>(k)] = geo::relative_motion(clip.poses[i], clip.poses[i + 1], dt);
      } else {
        f.actions[static_cast<size_t>(k)] = k > 0 ? f.actions[static_cast<size_t>(k - 1)]
                                                  : seq.frames.back().actions[kSubsteps - 1];
        f.action_valid[static_cast<size_t>(k)] = false;
      }
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

MotionStats compute_stats(const std::vector<TrainingSequence>& corpus) {
  Vec6 sum = Vec6::Zero();
  double count = 0;
  for (const auto& s : corpus)
    for (const auto& f : s.frames)
      for (int k = 0; k < kSubsteps; ++k)
        if (f.action_valid[static_cast<size_t>(k)]) {
          sum += to_vec(f.actions[static_cast<size_t>(k)]);
          count += 1;
        }
  if (count == 0) throw std::invalid_argument("compute_stats: empty corpus");
  MotionStats st;
  st.mean = sum / count;
  Vec6 var = Vec6::Zero();
  for (const auto& s : corpus)
    for (const auto& f : s.frames)
      for (int k = 0; k < kSubsteps; ++k)
        if (f.action_valid[static_cast<size_t>(k)]) {
          const Vec6 d = to_vec(f.actions[static_cast<size_t>(k)]) - st.mean;
          var += d.cwiseProduct(d);
        }
  st.std = (var / count).cwiseSqrt().cwiseMax(1e-6);
  return st;
}

Vec6 normalize_motion(const CameraMotion& m, const MotionStats& s) {
  return (to_vec(m) - s.mean).cwiseQuotient(s.std);
}

CameraMotion denormalize_motion(const Vec6& v, const MotionStats& s) {
  return from_vec(v.cwiseProduct(s.std) + s.mean);
}

TrainingSequence hflip(const TrainingSequence& seq) {
  TrainingSequence out = seq;
  for (auto& f : out.frames) {
    const Quat& q = f.pose.orientation;
    f.pose = CameraPose(Vec3(-f.pose.position.x(), f.pose.position.y(), f.pose.position.z()),
                        Quat(q[0], q[1], -q[2], -q[3]));
    for (auto& a : f.actions) {
      a.linear.x() = -a.linear.x();
      a.angular.y() = -a.angular.y();
      a.angular.z() = -a.angular.z();
    }
    if (f.features.size()) {
      Eigen::MatrixXd mirrored(f.features.rows(), f.features.cols());
      for (int r = 0; r < sim::kGridRows; ++r)
        for (int c = 0; c < sim::kGridCols; ++c)
          mirrored.row(r * sim::kGridCols + c) = f.features.row(r * sim::kGridCols + (sim::kGridCols - 1 - c));
      f.features = std::move(mirrored);
    }
    f.depth = f.depth.rowwise().reverse().eval();
  }
  return out;
}

sim::PatchObservation scale_observation(sim::PatchObservation obs, double s) {
  obs.depth *= s;
  obs.features.leftCols(5) /= s;
  return obs;
}

TrainingSequence build_sequence(const traj::Clip& clip, const sim::World& world, int feature_dim) {
  TrainingSequence seq = chunk_actions(clip);
  const double s = clip.scale_factor;
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    const CameraPose& p = clip.poses[kSubsteps * t];
    const CameraPose in_world(p.position / s, p.orientation);
    auto obs = scale_observation(sim::observe(world, in_world, feature_dim), s);
    seq.frames[t].features = std::move(obs.features);
    seq.frames[t].depth = obs.depth;
  }
  return seq;
}

std::string world_name_of(const std::string& clip_id) {
  const auto k = clip_id.find("__");
  if (k == std::string::npos || k == 0) throw std::invalid_argument("clip id lacks a '<world>__' prefix: " + clip_id);
  return clip_id.substr(0, k);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormat = "dronecam-dataset";

json pose_json(const CameraPose& p) {
  const auto& q = p.orientation;
  return json::array({p.position.x(), p.position.y(), p.position.z(), q[0], q[1], q[2], q[3]});
}

CameraPose pose_from(const json& j) {
  return CameraPose(Vec3(j.at(0), j.at(1), j.at(2)), Quat(j.at(3), j.at(4), j.at(5), j.at(6)));
}

json sequence_json(const TrainingSequence& s, int channels) {
  json frames = json::array();
  for (const auto& f : s.frames) {
    json feat = json::array();
    for (int r = 0; r < f.features.rows(); ++r)
      for (int c = 0; c < channels; ++c) feat.push_back(f.features(r, c));
    json depth = json::array();
    for (int r = 0; r < sim::kGridRows; ++r)
      for (int c = 0; c < sim::kGridCols; ++c) depth.push_back(f.depth(r, c));
    json acts = json::array(), valid = json::array();
    for (int k = 0; k < kSubsteps; ++k) {
      const Vec6 v = to_vec(f.actions[static_cast<size_t>(k)]);
      acts.push_back(std::vector<double>(v.data(), v.data() + 6));
      valid.push_back(f.action_valid[static_cast<size_t>(k)]);
    }
    frames.push_back({{"pose", pose_json(f.pose)}, {"features", feat}, {"depth", depth}, {"actions", acts},
                      {"action_valid", valid}});
  }
  return {{"clip_id", s.clip_id}, {"frames", frames}};
}

TrainingSequence sequence_from(const json& j, int channels, int feature_dim) {
  TrainingSequence s;
  s.clip_id = j.at("clip_id").get<std::string>();
  for (const auto& jf : j.at("frames")) {
    FrameSample f;
    f.pose = pose_from(jf.at("pose"));
    const auto& feat = jf.at("features");
    if (feat.size() != static_cast<size_t>(sim::kGridCells * channels))
      throw std::runtime_error("dataset: feature block has wrong size in " + s.clip_id);
    f.features = Eigen::MatrixXd::Zero(sim::kGridCells, feature_dim);
    for (int r = 0; r < sim::kGridCells; ++r)
      for (int c = 0; c < channels; ++c) f.features(r, c) = feat[static_cast<size_t>(r * channels + c)].get<double>();
    const auto& depth = jf.at("depth");
    if (depth.size() != static_cast<size_t>(sim::kGridCells)) throw std::runtime_error("dataset: bad depth block");
    for (int k = 0; k < sim::kGridCells; ++k) f.depth(k / sim::kGridCols, k % sim::kGridCols) = depth[static_cast<size_t>(k)];
    const auto& acts = jf.at("actions");
    const auto& valid = jf.at("action_valid");
    if (acts.size() != kSubsteps || valid.size() != kSubsteps) throw std::runtime_error("dataset: frame needs 5 actions");
    for (size_t k = 0; k < kSubsteps; ++k) {
      Vec6 v;
      for (int c = 0; c < 6; ++c) v[c] = acts[k].at(static_cast<size_t>(c)).get<double>();
      f.actions[k] = from_vec(v);
      f.action_valid[k] = valid[k].get<bool>();
    }
    s.frames.push_back(std::move(f));
  }
  if (s.frames.empty() || s.frames.size() > kMaxFrames) throw std::runtime_error("dataset: sequence length out of range");
  return s;
}

}  // namespace

void write_dataset(const fs::path& path, const Dataset& ds) {
  int channels = 0;
  for (const auto& s : ds.sequences)
    for (const auto& f : s.frames)
      for (int c = static_cast<int>(f.features.cols()) - 1; c >= channels; --c)
        if (f.features.col(c).cwiseAbs().maxCoeff() > 0) {
          channels = c + 1;
          break;
        }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json{{"format", kFormat}, {"version", 1}, {"flip_prob", ds.flip_prob}, {"feature_dim", ds.feature_dim},
              {"stored_channels", channels}, {"sequences", ds.sequences.size()}}.dump()
      << '\n';
  for (const auto& s : ds.sequences) out << sequence_json(s, channels).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset read_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset is empty: " + path.string());
  const json head = json::parse(line);
  if (head.value("format", "") != kFormat) throw std::runtime_error("not a dataset file: " + path.string());
  Dataset ds;
  ds.flip_prob = head.at("flip_prob").get<double>();
  ds.feature_dim = head.at("feature_dim").get<int>();
  const int channels = head.at("stored_channels").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ds.sequences.push_back(sequence_from(json::parse(line), channels, ds.feature_dim));
  }
  if (ds.sequences.size() != head.at("sequences").get<size_t>())
    throw std::runtime_error("dataset: sequence count does not match header");
  return ds;
}

json stats_to_json(const MotionStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + 6)},
          {"std", std::vector<double>(s.std.data(), s.std.data() + 6)},
          {"world_scale", s.world_scale}};
}

MotionStats stats_from_json(const json& j) {
  MotionStats s;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto d = j.at("std").get<std::vector<double>>();
  if (m.size() != 6 || d.size() != 6) throw std::invalid_argument("stats: mean and std need 6 entries");
  for (int i = 0; i < 6; ++i) {
    s.mean[i] = m[static_cast<size_t>(i)];
    s.std[i] = d[static_cast<size_t>(i)];
    if (!(s.std[i] > 0)) throw std::invalid_argument("stats: std must be positive");
  }
  s.world_scale = j.value("world_scale", 1.0);
  return s;
}

void write_stats(const fs::path& path, const MotionStats& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << stats_to_json(s).dump(2) << '\n';
}

MotionStats read_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stats " + path.string());
  return stats_from_json(json::parse(in));
}

BuildResult build_dataset(const fs::path& clips_dir, const fs::path& worlds_dir, double flip_prob, int feature_dim,
                          int jobs) {
  if (!fs::is_directory(clips_dir)) throw std::runtime_error("clips directory not found: " + clips_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(clips_dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<traj::Clip> clips;
  for (const auto& f : files) clips.push_back(traj::read_clip(f));
  std::map<std::string, sim::World> worlds;
  for (const auto& c : clips) {
    const std::string name = world_name_of(c.id);
    if (!worlds.count(name)) worlds.emplace(name, sim::World::generate(sim::load_spec(worlds_dir / (name + ".json"))));
  }

  std::vector<std::optional<TrainingSequence>> built(clips.size());
  const long n = static_cast<long>(clips.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs)) if (jobs > 1)
  for (long i = 0; i < n; ++i) {
    const auto& c = clips[static_cast<size_t>(i)];
    try {
      built[static_cast<size_t>(i)] = build_sequence(c, worlds.at(world_name_of(c.id)), feature_dim);
    } catch (const TooShort&) {
    }
  }
  BuildResult res;
  res.dataset.flip_prob = flip_prob;
  res.dataset.feature_dim = feature_dim;
  double scale_sum = 0;
  for (size_t i = 0; i < built.size(); ++i) {
    if (!built[i]) {
      ++res.skipped;
      continue;
    }
    res.dataset.sequences.push_back(std::move(*built[i]));
    scale_sum += clips[i].scale_factor;
  }
  if (res.dataset.sequences.empty()) throw std::runtime_error("build_dataset: no usable clips in " + clips_dir.string());
  res.stats = compute_stats(res.dataset.sequences);
  res.stats.world_scale = scale_sum / static_cast<double>(res.dataset.sequences.size());
  return res;
}

TrainingSequence maybe_flip(const TrainingSequence& seq, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  return coin(rng) ? hflip(seq) : seq;
}

}  // namespace dronecam::data
