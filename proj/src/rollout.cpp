#include "dronecam/rollout.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dronecam::rollout {

using json = nlohmann::json;
using geo::Quat;
using geo::Vec3;

Motions ConstantPolicy::act(std::uint64_t, std::span<const ContextFrame> context) {
  if (context.empty() || static_cast<int>(context.size()) > context_) throw std::invalid_argument("policy: bad context size");
  Motions out;
  out.fill(m_);
  return out;
}

TransformerPolicy::TransformerPolicy(const model::Model& m, const data::MotionStats& stats)
    : model_(&m), stats_(stats) {}

model::FrameInput TransformerPolicy::to_input(const ContextFrame& f) const {
  const double s = stats_.world_scale;
  const auto obs = data::scale_observation(f.obs, s);
  return {CameraPose(f.pose.position * s, f.pose.orientation), obs.features, obs.depth};
}

model::Vec6 TransformerPolicy::to_normalized(const CameraMotion& m) const {
  CameraMotion scaled = m;
  scaled.linear *= stats_.world_scale;
  return data::normalize_motion(scaled, stats_);
}

namespace {

bool same_frame(const ContextFrame& a, const ContextFrame& b) {
  if (a.pose.position != b.pose.position || a.pose.orientation != b.pose.orientation) return false;
  if (a.obs.features != b.obs.features || a.obs.depth != b.obs.depth) return false;
  if (a.motions.size() != b.motions.size()) return false;
  for (size_t i = 0; i < a.motions.size(); ++i)
    if (a.motions[i].linear != b.motions[i].linear || a.motions[i].angular != b.motions[i].angular) return false;
  return true;
}

}  // namespace

Motions TransformerPolicy::decode_frame(const ContextFrame& f) {
  Motions out;
  model::Vec6 a = session_->begin_frame(to_input(f));
  for (int k = 0; k < data::kSubsteps; ++k) {
    CameraMotion m = data::denormalize_motion(a, stats_);
    m.linear /= stats_.world_scale;
    out[static_cast<size_t>(k)] = m;
    // Feeding the executed motion back keeps the context identical to a
    // from-scratch rebuild.
    a = session_->push_action(to_normalized(m));
  }
  return out;
}

Motions TransformerPolicy::act(std::uint64_t cond_seed, std::span<const ContextFrame> context) {
  if (context.empty()) throw std::invalid_argument("policy: empty context");
  if (static_cast<int>(context.size()) > context_frames()) throw ContextOverflow("policy: context longer than the model's");
  for (size_t i = 0; i + 1 < context.size(); ++i)
    if (context[i].motions.size() != data::kSubsteps) throw std::invalid_argument("policy: past frame without 5 motions");

  bool reuse = session_ && cond_seed == cond_seed_ && fed_.size() + 1 == context.size();
  for (size_t i = 0; reuse && i < fed_.size(); ++i) reuse = same_frame(fed_[i], context[i]);
  if (!reuse) {
    ++rebuilds_;
    session_.emplace(*model_, model::sample_cond(cond_seed, model_->config().hidden));
    cond_seed_ = cond_seed;
    fed_.clear();
    for (size_t i = 0; i + 1 < context.size(); ++i) {
      session_->begin_frame(to_input(context[i]));
      for (const auto& m : context[i].motions) session_->push_action(to_normalized(m));
      fed_.push_back(context[i]);
    }
  }
  const Motions out = decode_frame(context.back());
  ContextFrame done = context.back();
  // Stored with the motions as they were fed: rounded through normalization.
  done.motions.assign(out.begin(), out.end());
  fed_.push_back(std::move(done));
  return out;
}

std::string termination_name(Termination t) { return t == Termination::kCollision ? "collision" : "duration"; }

Termination parse_termination(const std::string& s) {
  if (s == "collision") return Termination::kCollision;
  if (s == "duration") return Termination::kDuration;
  throw std::invalid_argument("unknown termination: " + s);
}

EpisodeResult run(Policy& policy, const sim::World& world, const CameraPose& init_pose, std::uint64_t cond_seed,
                  const EpisodeConfig& cfg) {
  if (!(cfg.duration_s > 0) || !std::isfinite(cfg.duration_s)) throw std::invalid_argument("episode: duration must be > 0");
  if (sim::collision(world, init_pose.position, init_pose.position, cfg.clearance))
    throw std::invalid_argument("episode: initial pose collides");
  const int total = static_cast<int>(std::lround(cfg.duration_s * kFrameRate));
  if (total < 1) throw std::invalid_argument("episode: duration shorter than one frame");
  const int ctx = policy.context_frames();
  const int window = cfg.window_frames > 0 ? cfg.window_frames : ctx;
  const int keep = cfg.keep_frames > 0 ? cfg.keep_frames : window / 2;
  if (cfg.windowed && (window > ctx || keep < 1 || keep >= window)) throw std::invalid_argument("episode: need 1 <= keep < window <= context");
  if (!cfg.windowed && total > ctx) throw std::invalid_argument("episode: duration exceeds the policy context; use the windowed rollout");

  EpisodeResult res;
  res.origin = init_pose;
  res.cond_seed = cond_seed;
  std::vector<CameraPose> world_poses{init_pose};
  // Frames in world coordinates with their executed motions.
  std::vector<ContextFrame> history;
  int first = 0;
  const double dt = 1.0 / kStepRate;
  for (int f = 0; f < total; ++f) {
    const CameraPose here = world_poses.back();
    ContextFrame frame{here, sim::observe(world, here, policy.feature_dim()), {}};
    res.frames.push_back({static_cast<int>(world_poses.size()) - 1, frame.obs.depth});
    history.push_back(std::move(frame));
    if (cfg.windowed && f - first >= window) {
      first = f - keep;
      ++res.window_slides;
      res.slide_steps.push_back(static_cast<int>(world_poses.size()) - 1);
    }
    std::vector<ContextFrame> context(history.begin() + first, history.end());
    const CameraPose base = geo::inverse(history[static_cast<size_t>(first)].pose);
    for (auto& c : context) c.pose = geo::compose(base, c.pose);
    const Motions motions = policy.act(cond_seed, context);
    bool hit = false;
    for (const auto& m : motions) {
      const CameraPose next = geo::integrate_motion(world_poses.back(), m, dt);
      hit = sim::collision(world, world_poses.back().position, next.position, cfg.clearance);
      world_poses.push_back(next);
      res.motions.push_back(m);
      history.back().motions.push_back(m);
      if (hit) break;
    }
    if (hit) {
      res.terminated_by = Termination::kCollision;
      break;
    }
    ++res.completed_frames;
  }
  res.duration_s = static_cast<double>(world_poses.size() - 1) / kStepRate;
  const CameraPose to_local = geo::inverse(init_pose);
  for (const auto& p : world_poses) res.poses.push_back(geo::compose(to_local, p));
  return res;
}

EpisodeResult run_episode(Policy& policy, const sim::World& world, const CameraPose& init_pose,
                          std::uint64_t cond_seed, double duration_s, double clearance) {
  return run(policy, world, init_pose, cond_seed, {duration_s, clearance, false, 0, 0});
}

EpisodeResult run_episode_windowed(Policy& policy, const sim::World& world, const CameraPose& init_pose,
                                   std::uint64_t cond_seed, double duration_s, int window_frames, int keep_frames,
                                   double clearance) {
  return run(policy, world, init_pose, cond_seed, {duration_s, clearance, true, window_frames, keep_frames});
}

namespace {

json pose_json(const CameraPose& p) {
  const Quat& q = p.orientation;
  return json::array({p.position.x(), p.position.y(), p.position.z(), q[0], q[1], q[2], q[3]});
}

CameraPose pose_from(const json& j) {
  if (!j.is_array() || j.size() != 7) throw std::invalid_argument("pose must have 7 numbers");
  return CameraPose(Vec3(j[0], j[1], j[2]), Quat(j[3], j[4], j[5], j[6]));
}

}  // namespace

json episode_to_json(const EpisodeResult& e) {
  json poses = json::array(), motions = json::array(), frames = json::array();
  for (const auto& p : e.poses) poses.push_back(pose_json(p));
  for (const auto& m : e.motions)
    motions.push_back(json::array({m.linear.x(), m.linear.y(), m.linear.z(), m.angular.x(), m.angular.y(), m.angular.z()}));
  for (const auto& f : e.frames) {
    json d = json::array();
    for (int r = 0; r < sim::kGridRows; ++r)
      for (int c = 0; c < sim::kGridCols; ++c) d.push_back(f.depth(r, c));
    frames.push_back({{"step", f.step}, {"depth", d}});
  }
  return {{"terminated_by", termination_name(e.terminated_by)},
          {"duration_s", e.duration_s},
          {"completed_frames", e.completed_frames},
          {"window_slides", e.window_slides},
          {"slide_steps", e.slide_steps},
          {"cond_seed", e.cond_seed},
          {"origin", pose_json(e.origin)},
          {"poses", poses},
          {"motions", motions},
          {"frames", frames}};
}

EpisodeResult episode_from_json(const json& j) {
  EpisodeResult e;
  e.terminated_by = parse_termination(j.at("terminated_by"));
  e.duration_s = j.at("duration_s");
  e.completed_frames = j.at("completed_frames");
  e.window_slides = j.value("window_slides", 0);
  e.slide_steps = j.value("slide_steps", std::vector<int>{});
  e.cond_seed = j.value("cond_seed", std::uint64_t{0});
  if (j.contains("origin")) e.origin = pose_from(j["origin"]);
  for (const auto& p : j.at("poses")) e.poses.push_back(pose_from(p));
  for (const auto& m : j.value("motions", json::array())) {
    CameraMotion cm;
    cm.linear = Vec3(m.at(0), m.at(1), m.at(2));
    cm.angular = Vec3(m.at(3), m.at(4), m.at(5));
    e.motions.push_back(cm);
  }
  for (const auto& f : j.value("frames", json::array())) {
    FrameRecord r;
    r.step = f.at("step");
    const auto& d = f.at("depth");
    for (int k = 0; k < sim::kGridCells; ++k) r.depth(k / sim::kGridCols, k % sim::kGridCols) = d.at(static_cast<size_t>(k));
    e.frames.push_back(r);
  }
  return e;
}

void write_episode(const std::filesystem::path& path, const EpisodeResult& e, const json& extra) {
  json j = episode_to_json(e);
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(path);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

EpisodeResult read_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return episode_from_json(json::parse(in));
}

CameraPose parse_pose(const std::string& csv) {
  std::stringstream ss(csv);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double x = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad number in pose: " + item);
    v.push_back(x);
  }
  if (v.size() != 7) throw std::invalid_argument("pose needs 7 comma-separated numbers: x,y,z,qw,qx,qy,qz");
  return CameraPose(Vec3(v[0], v[1], v[2]), Quat(v[3], v[4], v[5], v[6]));
}

}  // namespace dronecam::rollout
