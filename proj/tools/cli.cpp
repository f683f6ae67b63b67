#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dronecam/dataset.hpp"
#include "dronecam/metrics.hpp"
#include "dronecam/model.hpp"
#include "dronecam/rollout.hpp"
#include "dronecam/simworld.hpp"
#include "dronecam/synthgen.hpp"
#include "dronecam/train.hpp"
#include "dronecam/trajpipe.hpp"

namespace dronecam::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum class Level { kError = 0, kWarn, kInfo, kDebug };

Level log_level() {
  const char* env = std::getenv("DRONECAM_LOG");
  if (!env) return Level::kInfo;
  const std::string s(env);
  if (s == "error") return Level::kError;
  if (s == "warn") return Level::kWarn;
  if (s == "debug") return Level::kDebug;
  return Level::kInfo;
}

// One key=value line per event on stderr.
void log(Level lvl, const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields = {}) {
  static const Level threshold = log_level();
  if (lvl > threshold) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "level=" << names[static_cast<int>(lvl)] << " event=" << event;
  for (const auto& [k, v] : fields) std::cerr << ' ' << k << '=' << v;
  std::cerr << '\n';
}

template <class T>
std::string str(const T& v) {
  std::ostringstream o;
  o << v;
  return o.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 1;
};

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  int worlds = 4;
  int clips_per_world = 4;
  std::string styles = "flyover,corridor,orbit,reveal";
  std::string kinds = "terrain,canyon,city-blocks";
  std::string out;
  double corrupt_fraction = 0.0;
  std::string corrupt_mode = "jump";
  double corrupt_magnitude = 1.0;
  double duration = 10.0;
  std::string world_prefix = "w";
};

int run_synth(const SynthArgs& a, const Globals& g) {
  synth::CorpusConfig cfg;
  cfg.worlds = a.worlds;
  cfg.clips_per_world = a.clips_per_world;
  cfg.styles = synth::parse_styles(a.styles);
  cfg.kinds.clear();
  std::stringstream ss(a.kinds);
  for (std::string k; std::getline(ss, k, ',');)
    if (!k.empty()) cfg.kinds.push_back(sim::parse_kind(k));
  if (cfg.kinds.empty()) throw std::invalid_argument("--kinds is empty");
  cfg.seed = g.seed;
  cfg.corrupt_fraction = a.corrupt_fraction;
  cfg.corrupt_mode = synth::parse_corrupt_mode(a.corrupt_mode);
  cfg.corrupt_magnitude = a.corrupt_magnitude;
  cfg.expert.duration_s = a.duration;
  cfg.world_prefix = a.world_prefix;
  cfg.jobs = g.jobs;
  const auto corpus = synth::generate_corpus(cfg);
  synth::write_corpus(a.out, corpus, cfg);
  log(Level::kInfo, "synth.done",
      {{"clips", str(corpus.clips.size())}, {"failures", str(corpus.failures)}, {"out", a.out}});
  return 0;
}

// --- filter / calibrate ----------------------------------------------------

struct FilterArgs {
  std::string input, output, truth;
  double threshold = 0.2;
  int fps = 15;
  traj::UkfConfig ukf;
};

int run_filter(const FilterArgs& a, const Globals& g) {
  traj::PipelineConfig cfg;
  cfg.fps = a.fps;
  cfg.threshold = a.threshold;
  cfg.ukf = a.ukf;
  cfg.jobs = g.jobs;
  const auto report = traj::filter_directory(a.input, a.output, cfg);
  if (!a.truth.empty()) {
    std::map<std::string, bool> truth;
    std::ifstream in(a.truth);
    if (!in) throw std::runtime_error("cannot open " + a.truth);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      truth[line.substr(0, comma)] = line.substr(comma + 1, 1) == "1";
    }
    std::ifstream scores(fs::path(a.output) / "scores.csv");
    std::ofstream labels(fs::path(a.output) / "labels.csv");
    labels << "clip_id,max_deviation,is_correct\n";
    std::getline(scores, line);
    while (std::getline(scores, line)) {
      std::stringstream row(line);
      std::string id, source, dev;
      std::getline(row, id, ',');
      std::getline(row, source, ',');
      std::getline(row, dev, ',');
      const auto it = truth.find(source);
      if (it == truth.end()) continue;
      labels << id << ',' << dev << ',' << (it->second ? 1 : 0) << '\n';
    }
    if (!labels) throw std::runtime_error("cannot write labels.csv");
  }
  std::vector<std::pair<std::string, std::string>> fields{{"accepted", str(report.accepted)}};
  for (const auto& [k, v] : report.counts) fields.emplace_back(k, str(v));
  log(Level::kInfo, "filter.done", fields);
  return 0;
}

int run_calibrate(const std::string& labels, const std::string& out) {
  const auto scores = traj::read_labels(labels);
  const auto choice = traj::select_threshold(scores);
  const double auc = traj::roc_auc(scores);
  const json j{{"threshold", choice.threshold}, {"youden_j", choice.youden_j}, {"tpr", choice.tpr},
               {"fpr", choice.fpr},             {"auc", auc},                 {"samples", scores.size()}};
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) write_json(out, j);
  return 0;
}

// --- dataset ---------------------------------------------------------------

struct DatasetArgs {
  std::string clips, worlds, output, stats;
  double flip_prob = 0.5;
  int feature_dim = 32;
};

fs::path default_stats_path(const fs::path& dataset) {
  return dataset.parent_path() / (dataset.stem().string() + ".stats.json");
}

int run_dataset(const DatasetArgs& a, const Globals& g) {
  const auto res = data::build_dataset(a.clips, a.worlds, a.flip_prob, a.feature_dim, g.jobs);
  const fs::path out(a.output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  data::write_dataset(out, res.dataset);
  const fs::path stats = a.stats.empty() ? default_stats_path(out) : fs::path(a.stats);
  data::write_stats(stats, res.stats);
  log(Level::kInfo, "dataset.done",
      {{"sequences", str(res.dataset.sequences.size())}, {"skipped", str(res.skipped)}, {"stats", stats.string()}});
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string dataset, stats, config, out, log_file;
  int steps = -1;
  int batch_size = 0;
};

int run_train(const TrainArgs& a, const Globals& g) {
  const auto ds = data::read_dataset(a.dataset);
  const auto stats = data::read_stats(a.stats.empty() ? default_stats_path(a.dataset) : fs::path(a.stats));
  model::ModelConfig mc;
  model::TrainConfig tc;
  tc.flip_prob = ds.flip_prob;
  if (!a.config.empty()) {
    const json j = read_json(a.config);
    for (const auto& [k, v] : j.items())
      if (k != "model" && k != "train") throw std::invalid_argument("config: unknown section '" + k + "'");
    if (j.contains("model")) mc = model::config_from_json(j["model"]);
    if (j.contains("train")) tc = model::train_config_from_json(j["train"], tc);
  }
  mc.seed = g.seed;
  mc.feature_dim = ds.feature_dim;
  mc.validate();
  tc.seed = g.seed;
  if (a.steps >= 0) tc.steps = a.steps;
  if (a.batch_size > 0) tc.batch_size = a.batch_size;
  model::Model m(mc);
  log(Level::kInfo, "train.start",
      {{"params", str(m.parameter_count())}, {"sequences", str(ds.sequences.size())}, {"steps", str(tc.steps)}});
  json steps = json::array();
  const int every = std::max(1, tc.steps / 20);
  model::train(m, ds.sequences, stats, tc, [&](const model::StepLog& s) {
    steps.push_back({{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"grad_norm", s.grad_norm}});
    if (s.step % every == 0 || s.step + 1 == tc.steps)
      log(Level::kInfo, "train.step", {{"step", str(s.step)}, {"loss", str(s.loss)}, {"lr", str(s.lr)}});
  });
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  m.save(out, stats);
  if (!a.log_file.empty())
    write_json(a.log_file, {{"model", model::config_to_json(mc)}, {"train", model::train_config_to_json(tc)}, {"steps", steps}});
  log(Level::kInfo, "train.done", {{"out", a.out}});
  return 0;
}

// --- rollout ---------------------------------------------------------------

struct RolloutArgs {
  std::string ckpt, world_spec, init_pose, out;
  std::uint64_t cond_seed = 0;
  double duration = 10.0;
  bool windowed = false;
  int window = 0;
  int keep = 0;
  double clearance = 0.2;
};

int run_rollout(const RolloutArgs& a, const Globals& g) {
  data::MotionStats stats;
  const model::Model m = model::Model::load(a.ckpt, &stats);
  const auto spec = sim::load_spec(a.world_spec);
  const auto world = sim::World::generate(spec);
  const geo::CameraPose init = a.init_pose.empty() ? synth::start_pose(world, g.seed) : rollout::parse_pose(a.init_pose);
  rollout::TransformerPolicy policy(m, stats);
  rollout::EpisodeConfig cfg;
  cfg.duration_s = a.duration;
  cfg.clearance = a.clearance;
  cfg.window_frames = a.window;
  cfg.keep_frames = a.keep;
  cfg.windowed = a.windowed || std::lround(a.duration * rollout::kFrameRate) > policy.context_frames();
  const auto ep = rollout::run(policy, world, init, a.cond_seed, cfg);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  rollout::write_episode(out, ep, {{"world_spec", sim::spec_to_json(spec)}});
  log(Level::kInfo, "rollout.done",
      {{"terminated_by", rollout::termination_name(ep.terminated_by)}, {"frames", str(ep.completed_frames)}, {"out", a.out}});
  return 0;
}

// --- eval ------------------------------------------------------------------

int run_eval(const std::string& episodes, const std::string& out, const std::string& csv) {
  const auto report = metrics::evaluate_directory(episodes);
  const fs::path o(out);
  if (o.has_parent_path()) fs::create_directories(o.parent_path());
  metrics::emit_report(o, report, metrics::Format::kJson);
  if (!csv.empty()) metrics::emit_report(csv, report, metrics::Format::kCsv);
  log(Level::kInfo, "eval.done",
      {{"episodes", str(report.episodes)}, {"collision_rate", str(report.collision_rate)}, {"delta_v", str(report.delta_v)}});
  return 0;
}

// --- world -----------------------------------------------------------------

int run_world_preview(const std::string& spec_path, const std::string& pose, const std::string& out, const Globals& g) {
  const auto world = sim::World::generate(sim::load_spec(spec_path));
  const geo::CameraPose p = pose.empty() ? synth::start_pose(world, g.seed) : rollout::parse_pose(pose);
  sim::write_pgm(out, sim::render_depth(world, p));
  log(Level::kInfo, "world.preview", {{"out", out}});
  return 0;
}

int run_world_new(const std::string& kind, int obstacles, double size, const std::string& out, const Globals& g) {
  sim::WorldSpec s;
  s.seed = g.seed;
  s.kind = sim::parse_kind(kind);
  s.obstacle_count = obstacles;
  s.size = size;
  sim::World::generate(s);
  write_json(out, sim::spec_to_json(s));
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Camera-motion data pipeline, model training and closed-loop simulation.", "dronecam"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic component")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads where a command allows them")->capture_default_str()->check(CLI::PositiveNumber);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate expert trajectories in procedural worlds");
  synth->add_option("--worlds", sa.worlds, "Number of worlds")->capture_default_str();
  synth->add_option("--clips-per-world", sa.clips_per_world, "Clips per world")->capture_default_str();
  synth->add_option("--styles", sa.styles, "Comma-separated styles")->capture_default_str();
  synth->add_option("--kinds", sa.kinds, "World kinds, assigned round-robin")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--corrupt-fraction", sa.corrupt_fraction, "Fraction of clips to corrupt")->capture_default_str();
  synth->add_option("--corrupt-mode", sa.corrupt_mode, "jump or jitter")->capture_default_str();
  synth->add_option("--corrupt-magnitude", sa.corrupt_magnitude, "Corruption size, world units")->capture_default_str();
  synth->add_option("--duration", sa.duration, "Clip duration, seconds")->capture_default_str();
  synth->add_option("--world-prefix", sa.world_prefix, "World name prefix")->capture_default_str();

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter", "Segment, normalize and filter raw trajectories");
  filter->add_option("--input", fa.input, "Directory of .csv/.jsonl trajectories")->required();
  filter->add_option("--output", fa.output, "Output directory")->required();
  filter->add_option("--threshold", fa.threshold, "Deviation threshold")->capture_default_str();
  filter->add_option("--fps", fa.fps, "Frame rate")->capture_default_str()->check(CLI::PositiveNumber);
  filter->add_option("--ukf-alpha", fa.ukf.alpha)->capture_default_str();
  filter->add_option("--ukf-beta", fa.ukf.beta)->capture_default_str();
  filter->add_option("--ukf-kappa", fa.ukf.kappa)->capture_default_str();
  filter->add_option("--process-noise", fa.ukf.process_noise_scale)->capture_default_str();
  filter->add_option("--measurement-noise", fa.ukf.measurement_noise_scale)->capture_default_str();
  filter->add_option("--truth", fa.truth, "truth.csv from synth; writes labels.csv");

  std::string labels, calib_out;
  auto* calibrate = app.add_subcommand("calibrate", "Pick the deviation threshold from labelled scores");
  calibrate->add_option("--labels", labels, "CSV with max_deviation,is_correct columns")->required();
  calibrate->add_option("--out", calib_out, "Also write the result as JSON");

  DatasetArgs da;
  auto* dataset = app.add_subcommand("dataset", "Training-set tools");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "Chunk accepted clips and render observations");
  build->add_option("--clips", da.clips, "Directory of accepted clips")->required();
  build->add_option("--worlds", da.worlds, "Directory of world specs")->required();
  build->add_option("--output", da.output, "Dataset file (JSON lines)")->required();
  build->add_option("--stats", da.stats, "Stats file (default <output stem>.stats.json)");
  build->add_option("--flip-prob", da.flip_prob, "Horizontal flip probability at load time")->capture_default_str();
  build->add_option("--feature-dim", da.feature_dim, "Patch feature size")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the camera-motion model");
  train->add_option("--dataset", ta.dataset, "Dataset file")->required();
  train->add_option("--stats", ta.stats, "Stats file (default <dataset stem>.stats.json)");
  train->add_option("--config", ta.config, "JSON with optional 'model' and 'train' sections");
  train->add_option("--steps", ta.steps, "Optimizer steps (overrides config)");
  train->add_option("--batch-size", ta.batch_size, "Sequences per step (overrides config)");
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--log", ta.log_file, "Write per-step losses as JSON");

  RolloutArgs ra;
  auto* roll = app.add_subcommand("rollout", "Fly a trained model in a world");
  roll->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
  roll->add_option("--world-spec", ra.world_spec, "World spec JSON")->required();
  roll->add_option("--init-pose", ra.init_pose, "x,y,z,qw,qx,qy,qz (default: a seeded start)");
  roll->add_option("--cond-seed", ra.cond_seed, "Seed of the conditioning vector")->capture_default_str();
  roll->add_option("--duration", ra.duration, "Seconds")->capture_default_str();
  roll->add_flag("--windowed", ra.windowed, "Slide the context window (implied past the model context)");
  roll->add_option("--window", ra.window, "Window frames (default: model context)");
  roll->add_option("--keep", ra.keep, "Frames kept on a slide (default: half the window)");
  roll->add_option("--clearance", ra.clearance, "Collision clearance")->capture_default_str();
  roll->add_option("--out", ra.out, "Episode JSON")->required();

  std::string episodes, eval_out, eval_csv;
  auto* eval = app.add_subcommand("eval", "Collision rate and smoothness over episodes");
  eval->add_option("--episodes", episodes, "Directory of episode JSON files")->required();
  eval->add_option("--out", eval_out, "Report JSON")->required();
  eval->add_option("--csv", eval_csv, "Also write a CSV report");

  std::string spec_path, pose, world_out, kind = "terrain";
  int obstacles = -1;
  double size = 400.0;
  auto* world = app.add_subcommand("world", "World tools");
  world->require_subcommand(1);
  auto* preview = world->add_subcommand("preview", "Render a depth preview as PGM");
  preview->add_option("--spec", spec_path, "World spec JSON")->required();
  preview->add_option("--pose", pose, "x,y,z,qw,qx,qy,qz (default: a seeded start)");
  preview->add_option("--out", world_out, "Output .pgm")->required();
  auto* wnew = world->add_subcommand("new", "Write a world spec");
  wnew->add_option("--kind", kind, "terrain, canyon or city-blocks")->capture_default_str();
  wnew->add_option("--obstacles", obstacles, "Obstacle count (negative: kind default)")->capture_default_str();
  wnew->add_option("--size", size, "World side length")->capture_default_str();
  wnew->add_option("--out", world_out, "Output spec JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return run_synth(sa, g);
    if (*filter) return run_filter(fa, g);
    if (*calibrate) return run_calibrate(labels, calib_out);
    if (*build) return run_dataset(da, g);
    if (*train) return run_train(ta, g);
    if (*roll) return run_rollout(ra, g);
    if (*eval) return run_eval(episodes, eval_out, eval_csv);
    if (*preview) return run_world_preview(spec_path, pose, world_out, g);
    if (*wnew) return run_world_new(kind, obstacles, size, world_out, g);
  } catch (const std::invalid_argument& e) {
    log(Level::kError, "invalid", {{"message", '"' + std::string(e.what()) + '"'}});
    return 1;
  } catch (const nlohmann::json::exception& e) {
    log(Level::kError, "invalid", {{"message", '"' + std::string(e.what()) + '"'}});
    return 1;
  } catch (const std::exception& e) {
    log(Level::kError, "failed", {{"message", '"' + std::string(e.what()) + '"'}});
    return 2;
  }
  return 1;
}

}  // namespace dronecam::cli
