#include "dronecam/trajpipe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace dronecam::traj {
namespace fs = std::filesystem;
using geo::Quat;
using geo::Vec3;
using json = nlohmann::json;

std::vector<Clip> segment_clips(const std::vector<CameraPose>& trajectory, int fps, const std::string& id_prefix) {
  if (fps < 1) throw std::invalid_argument("segment_clips: fps must be >= 1");
  std::vector<Clip> out;
  const size_t max_len = static_cast<size_t>(10 * fps);
  for (size_t start = 0; start < trajectory.size(); start += max_len) {
    const size_t len = std::min(max_len, trajectory.size() - start);
    if (len < static_cast<size_t>(fps)) break;
    Clip c;
    c.id = id_prefix + "_s" + std::to_string(out.size());
    c.fps = fps;
    c.poses.assign(trajectory.begin() + static_cast<long>(start), trajectory.begin() + static_cast<long>(start + len));
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::vector<double> step_lengths(const Clip& clip) {
  std::vector<double> d;
  d.reserve(clip.poses.size());
  for (size_t i = 1; i < clip.poses.size(); ++i)
    d.push_back((clip.poses[i].position - clip.poses[i - 1].position).norm());
  return d;
}

}  // namespace

Clip normalize_scale(const Clip& clip) {
  if (clip.poses.size() < 2) throw DegenerateClip("normalize_scale: clip " + clip.id + " has fewer than 2 frames");
  const auto d = step_lengths(clip);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  if (!(mean > 0) || !std::isfinite(mean)) throw DegenerateClip("normalize_scale: clip " + clip.id + " does not move");
  const double s = 1.0 / mean;
  Clip out = clip;
  for (auto& p : out.poses) p.position *= s;
  out.scale_factor = clip.scale_factor * s;
  return out;
}

bool speed_outlier_check(const Clip& clip) {
  if (clip.poses.size() < 2) throw std::invalid_argument("speed_outlier_check: need at least 2 frames");
  const auto d = step_lengths(clip);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  return *std::max_element(d.begin(), d.end()) <= 3.0 * mean;
}

// ---------------------------------------------------------------------------
// UKF over x = [p(3), q(4), v(3), w(3)]; v and w in the camera frame.

namespace {

constexpr int kN = 13;
constexpr int kM = 7;
using StateVec = Eigen::Matrix<double, kN, 1>;
using StateMat = Eigen::Matrix<double, kN, kN>;
using MeasVec = Eigen::Matrix<double, kM, 1>;
using MeasMat = Eigen::Matrix<double, kM, kM>;
using Sigma = Eigen::Matrix<double, kN, 2 * kN + 1>;

Quat hamilton(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

void renormalize(StateVec& x) {
  const double n = x.segment<4>(3).norm();
  if (!(n > 1e-12) || !std::isfinite(n)) throw FilterDivergence("ukf: quaternion collapsed");
  x.segment<4>(3) /= n;
}

StateVec process(const StateVec& x, double dt) {
  StateVec y = x;
  const Quat q = x.segment<4>(3);
  const Quat qn = q / q.norm();
  y.head<3>() = x.head<3>() + geo::quat_rotate(qn, x.segment<3>(7) * dt);
  const Vec3 w = x.segment<3>(10) * dt;
  const double th = w.norm();
  const double k = th < 1e-4 ? 0.5 - th * th / 48.0 : std::sin(0.5 * th) / th;
  y.segment<4>(3) = hamilton(q, Quat(std::cos(0.5 * th), k * w[0], k * w[1], k * w[2]));
  return y;
}

struct Ukf {
  double lambda, wm0, wc0, wi;
  StateMat q_noise;
  MeasMat r_noise;
  StateVec x;
  StateMat p;

  Ukf(const UkfConfig& cfg, int fps) {
    if (!(cfg.alpha > 0)) throw std::invalid_argument("ukf: alpha must be positive");
    if (!(cfg.process_noise_scale > 0) || !(cfg.measurement_noise_scale > 0))
      throw std::invalid_argument("ukf: noise scales must be positive");
    lambda = cfg.alpha * cfg.alpha * (kN + cfg.kappa) - kN;
    wm0 = lambda / (kN + lambda);
    wc0 = wm0 + (1 - cfg.alpha * cfg.alpha + cfg.beta);
    wi = 0.5 / (kN + lambda);
    const double sp = cfg.process_noise_scale;
    const double sm = cfg.measurement_noise_scale;
    // Orientation is measured in quaternion units (half-angle), hence the /2.
    Eigen::Matrix<double, kN, 1> qd;
    qd << Vec3::Constant(0.5 * sp * 0.5 * sp), Eigen::Vector4d::Constant(0.0625 * sp * sp),
        Vec3::Constant(sp * fps * sp * fps), Vec3::Constant(sp * fps * sp * fps);
    q_noise = qd.asDiagonal();
    MeasVec rd;
    rd << Vec3::Constant(sm * sm), Eigen::Vector4d::Constant(0.0625 * sm * sm);
    r_noise = rd.asDiagonal();
  }

  Sigma sigma_points() const {
    const StateMat scaled = (kN + lambda) * p;
    Eigen::LLT<StateMat> llt(scaled);
    if (llt.info() != Eigen::Success) throw FilterDivergence("ukf: covariance lost positive definiteness");
    const StateMat l = llt.matrixL();
    Sigma s;
    s.col(0) = x;
    for (int i = 0; i < kN; ++i) {
      s.col(1 + i) = x + l.col(i);
      s.col(1 + kN + i) = x - l.col(i);
    }
    return s;
  }

  template <int R>
  Eigen::Matrix<double, R, 1> mean_of(const Eigen::Matrix<double, R, 2 * kN + 1>& pts) const {
    Eigen::Matrix<double, R, 1> m = wm0 * pts.col(0);
    for (int i = 1; i < 2 * kN + 1; ++i) m += wi * pts.col(i);
    return m;
  }

  Sigma predicted;

  void predict(double dt) {
    const Sigma s = sigma_points();
    for (int i = 0; i < 2 * kN + 1; ++i) predicted.col(i) = process(s.col(i), dt);
    x = mean_of<kN>(predicted);
    p = q_noise;
    for (int i = 0; i < 2 * kN + 1; ++i) {
      const StateVec d = predicted.col(i) - x;
      p += (i == 0 ? wc0 : wi) * d * d.transpose();
    }
    p = 0.5 * (p + p.transpose()).eval();
    renormalize(x);
  }

  void update(const CameraPose& z_pose) {
    // Pose measurement is linear in the state, so the predicted measurement
    // sigma points are the first seven state rows.
    const Sigma s = sigma_points();
    const Eigen::Matrix<double, kM, 2 * kN + 1> zs = s.topRows<kM>();
    const MeasVec zm = mean_of<kM>(zs);
    MeasMat sz = r_noise;
    Eigen::Matrix<double, kN, kM> pxz = Eigen::Matrix<double, kN, kM>::Zero();
    for (int i = 0; i < 2 * kN + 1; ++i) {
      const double w = i == 0 ? wc0 : wi;
      const MeasVec dz = zs.col(i) - zm;
      sz += w * dz * dz.transpose();
      pxz += w * (s.col(i) - x) * dz.transpose();
    }
    MeasVec z;
    Quat qz = z_pose.orientation;
    if (qz.dot(x.segment<4>(3)) < 0) qz = -qz;
    z << z_pose.position, qz;
    Eigen::LLT<MeasMat> llt(sz);
    if (llt.info() != Eigen::Success) throw FilterDivergence("ukf: innovation covariance not positive definite");
    const Eigen::Matrix<double, kN, kM> gain = llt.solve(pxz.transpose()).transpose();
    x += gain * (z - zm);
    p -= gain * sz * gain.transpose();
    p = 0.5 * (p + p.transpose()).eval();
    if (!x.allFinite() || !p.allFinite()) throw FilterDivergence("ukf: non-finite state");
    renormalize(x);
  }
};

}  // namespace

Clip ukf_smooth(const Clip& clip, const UkfConfig& cfg) {
  if (clip.poses.size() < 2) throw std::invalid_argument("ukf_smooth: need at least 2 frames");
  const double dt = 1.0 / clip.fps;
  Ukf f(cfg, clip.fps);
  const auto m0 = geo::relative_motion(clip.poses[0], clip.poses[1], dt);
  f.x << clip.poses[0].position, clip.poses[0].orientation, m0.linear, m0.angular;
  const double sm = cfg.measurement_noise_scale;
  Eigen::Matrix<double, kN, 1> pd;
  pd << Vec3::Constant(sm * sm), Eigen::Vector4d::Constant(0.0625 * sm * sm),
      Vec3::Constant(2 * sm * sm * clip.fps * clip.fps), Vec3::Constant(0.5 * sm * sm * clip.fps * clip.fps);
  f.p = pd.asDiagonal();

  Clip out = clip;
  for (size_t i = 0; i < clip.poses.size(); ++i) {
    if (i > 0) f.predict(dt);
    f.update(clip.poses[i]);
    out.poses[i] = CameraPose(f.x.head<3>(), f.x.segment<4>(3));
  }
  return out;
}

FilterVerdict deviation_score(const Clip& clip, const Clip& smoothed, double threshold) {
  if (clip.poses.size() != smoothed.poses.size()) throw std::invalid_argument("deviation_score: length mismatch");
  FilterVerdict v;
  v.threshold = threshold;
  v.per_frame_deviation.resize(clip.poses.size());
  for (size_t i = 0; i < clip.poses.size(); ++i) {
    v.per_frame_deviation[i] = (clip.poses[i].position - smoothed.poses[i].position).norm();
    v.max_deviation = std::max(v.max_deviation, v.per_frame_deviation[i]);
  }
  v.accepted = v.max_deviation <= threshold;
  return v;
}

// ---------------------------------------------------------------------------

ThresholdChoice select_threshold(const std::vector<LabeledScore>& labeled) {
  size_t pos = 0, neg = 0;
  for (const auto& l : labeled) (l.is_correct ? pos : neg)++;
  if (pos == 0 || neg == 0) throw std::invalid_argument("select_threshold: need both correct and incorrect labels");
  std::vector<LabeledScore> sorted = labeled;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.max_deviation < b.max_deviation;
  });
  // Sweep candidates in increasing order; clips with score <= candidate are
  // accepted (predicted correct).
  ThresholdChoice best;
  bool have = false;
  size_t tp = 0, fp = 0, i = 0;
  auto consider = [&](double thr) {
    while (i < sorted.size() && sorted[i].max_deviation <= thr) (sorted[i++].is_correct ? tp : fp)++;
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    if (!have || tpr - fpr > best.youden_j) {
      best = {thr, tpr - fpr, tpr, fpr};
      have = true;
    }
  };
  for (size_t k = 0; k + 1 < sorted.size(); ++k) {
    if (sorted[k].max_deviation < sorted[k + 1].max_deviation)
      consider(0.5 * (sorted[k].max_deviation + sorted[k + 1].max_deviation));
  }
  if (!have) consider(sorted.front().max_deviation);
  return best;
}

double roc_auc(const std::vector<LabeledScore>& labeled) {
  std::vector<LabeledScore> sorted = labeled;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.max_deviation < b.max_deviation;
  });
  double pos = 0, neg = 0, wins = 0;
  // Walk groups of equal score; each incorrect clip beats every correct clip
  // below it and ties with the ones at its own score.
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    double gp = 0, gn = 0;
    while (j < sorted.size() && sorted[j].max_deviation == sorted[i].max_deviation) {
      (sorted[j].is_correct ? gp : gn) += 1;
      ++j;
    }
    wins += gn * pos + 0.5 * gn * gp;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: need both classes");
  return wins / (pos * neg);
}

// ---------------------------------------------------------------------------

namespace {

struct ClipOutcome {
  std::string id;
  std::optional<Clip> accepted;
  std::optional<ScoredClip> scored;
  std::optional<Rejection> rejection;
};

ClipOutcome process_clip(const Clip& raw, const PipelineConfig& cfg) {
  ClipOutcome o;
  o.id = raw.id;
  Clip clip;
  try {
    clip = normalize_scale(raw);
  } catch (const DegenerateClip&) {
    o.rejection = Rejection{raw.id, reason::kDegenerate, std::nullopt};
    return o;
  }
  if (!speed_outlier_check(clip)) {
    o.rejection = Rejection{raw.id, reason::kSpeedOutlier, std::nullopt};
    return o;
  }
  Clip smooth;
  try {
    smooth = ukf_smooth(clip, cfg.ukf);
  } catch (const FilterDivergence&) {
    o.rejection = Rejection{raw.id, reason::kDivergence, std::nullopt};
    return o;
  }
  const FilterVerdict v = deviation_score(clip, smooth, cfg.threshold);
  o.scored = ScoredClip{clip, v};
  if (v.accepted) {
    o.accepted = clip;
  } else {
    o.rejection = Rejection{raw.id, reason::kDeviation, v.max_deviation};
  }
  return o;
}

}  // namespace

PipelineResult run_pipeline(const std::vector<RawTrajectory>& raws, const PipelineConfig& cfg) {
  std::vector<Clip> clips;
  std::vector<Rejection> early;
  for (const auto& r : raws) {
    if (r.load_error) {
      early.push_back({r.id, reason::kIoError, std::nullopt});
      continue;
    }
    auto segs = segment_clips(r.poses, cfg.fps, r.id);
    if (segs.empty()) early.push_back({r.id, reason::kTooShort, std::nullopt});
    for (auto& s : segs) clips.push_back(std::move(s));
  }
  std::sort(clips.begin(), clips.end(), [](const Clip& a, const Clip& b) { return a.id < b.id; });

  std::vector<ClipOutcome> outcomes(clips.size());
  const long n = static_cast<long>(clips.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, cfg.jobs)) if (cfg.jobs > 1)
  for (long i = 0; i < n; ++i) outcomes[static_cast<size_t>(i)] = process_clip(clips[static_cast<size_t>(i)], cfg);

  PipelineResult res;
  for (const char* r : {reason::kTooShort, reason::kDegenerate, reason::kSpeedOutlier, reason::kDivergence,
                        reason::kDeviation, reason::kIoError})
    res.report.counts[r] = 0;
  std::vector<Rejection> all = early;
  for (auto& o : outcomes) {
    if (o.scored) res.scored.push_back(std::move(*o.scored));
    if (o.accepted) res.accepted.push_back(std::move(*o.accepted));
    if (o.rejection) all.push_back(std::move(*o.rejection));
  }
  std::stable_sort(all.begin(), all.end(), [](const Rejection& a, const Rejection& b) { return a.clip_id < b.clip_id; });
  for (const auto& r : all) res.report.counts[r.reason]++;
  res.report.rejections = std::move(all);
  res.report.accepted = static_cast<int>(res.accepted.size());
  return res;
}

// ---------------------------------------------------------------------------
// I/O

namespace {

struct Record {
  long frame;
  CameraPose pose;
};

CameraPose pose_from_values(double x, double y, double z, double qw, double qx, double qy, double qz) {
  return CameraPose(Vec3(x, y, z), Quat(qw, qx, qy, qz));
}

std::vector<CameraPose> sort_records(std::vector<Record> recs) {
  std::stable_sort(recs.begin(), recs.end(), [](const Record& a, const Record& b) { return a.frame < b.frame; });
  std::vector<CameraPose> out;
  out.reserve(recs.size());
  for (auto& r : recs) out.push_back(r.pose);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  return out;
}

const std::vector<std::string> kColumns = {"frame_index", "x", "y", "z", "qw", "qx", "qy", "qz"};

json pose_record(long frame, const CameraPose& p) {
  const auto& q = p.orientation;
  return json{{"frame_index", frame}, {"x", p.position.x()}, {"y", p.position.y()}, {"z", p.position.z()},
              {"qw", q[0]}, {"qx", q[1]}, {"qy", q[2]}, {"qz", q[3]}};
}

CameraPose pose_from_json(const json& j) {
  return pose_from_values(j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>(),
                          j.at("qw").get<double>(), j.at("qx").get<double>(), j.at("qy").get<double>(),
                          j.at("qz").get<double>());
}

}  // namespace

std::vector<CameraPose> read_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Record> recs;
  std::string line;
  if (path.extension() == ".csv") {
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
    const auto header = split_csv(line);
    std::vector<int> idx;
    for (const auto& c : kColumns) {
      auto it = std::find(header.begin(), header.end(), c);
      if (it == header.end()) throw std::runtime_error(path.string() + ": header lacks column " + c);
      idx.push_back(static_cast<int>(it - header.begin()));
    }
    long lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto cells = split_csv(line);
      double v[8];
      try {
        for (int k = 0; k < 8; ++k) v[k] = std::stod(cells.at(static_cast<size_t>(idx[static_cast<size_t>(k)])));
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      }
      recs.push_back({static_cast<long>(v[0]), pose_from_values(v[1], v[2], v[3], v[4], v[5], v[6], v[7])});
    }
  } else {
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        recs.push_back({j.at("frame_index").get<long>(), pose_from_json(j)});
      } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  return sort_records(std::move(recs));
}

void write_trajectory_csv(const fs::path& path, const std::vector<CameraPose>& poses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "frame_index,x,y,z,qw,qx,qy,qz\n";
  out.precision(17);
  for (size_t i = 0; i < poses.size(); ++i) {
    const auto& p = poses[i];
    out << i << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ','
        << p.orientation[0] << ',' << p.orientation[1] << ',' << p.orientation[2] << ',' << p.orientation[3] << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_clip(const fs::path& path, const Clip& clip) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json{{"clip_id", clip.id}, {"fps", clip.fps}, {"scale_factor", clip.scale_factor},
              {"frames", clip.poses.size()}}.dump()
      << '\n';
  for (size_t i = 0; i < clip.poses.size(); ++i) out << pose_record(static_cast<long>(i), clip.poses[i]).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Clip read_clip(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty clip file");
  const json head = json::parse(line);
  Clip c;
  c.id = head.at("clip_id").get<std::string>();
  c.fps = head.at("fps").get<int>();
  c.scale_factor = head.at("scale_factor").get<double>();
  std::vector<Record> recs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    recs.push_back({j.at("frame_index").get<long>(), pose_from_json(j)});
  }
  c.poses = sort_records(std::move(recs));
  if (c.poses.size() != head.at("frames").get<size_t>())
    throw std::runtime_error(path.string() + ": frame count does not match header");
  return c;
}

json report_to_json(const RejectionReport& report) {
  json rej = json::array();
  for (const auto& r : report.rejections) {
    json e{{"clip_id", r.clip_id}, {"reason", r.reason}};
    e["max_deviation"] = r.max_deviation ? json(*r.max_deviation) : json(nullptr);
    rej.push_back(e);
  }
  return json{{"accepted", report.accepted}, {"counts", report.counts}, {"rejections", rej}};
}

std::string source_of(const std::string& clip_id) {
  const auto k = clip_id.rfind("_s");
  if (k == std::string::npos || k + 2 >= clip_id.size()) return clip_id;
  for (size_t i = k + 2; i < clip_id.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(clip_id[i]))) return clip_id;
  return clip_id.substr(0, k);
}

RejectionReport filter_directory(const fs::path& input, const fs::path& output, const PipelineConfig& cfg) {
  if (!fs::is_directory(input)) throw std::runtime_error("input directory not found: " + input.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".csv" || ext == ".jsonl")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RawTrajectory> raws;
  for (const auto& f : files) {
    RawTrajectory r;
    r.id = f.stem().string();
    try {
      r.poses = read_trajectory(f);
    } catch (const std::exception& e) {
      r.load_error = e.what();
    }
    raws.push_back(std::move(r));
  }
  const auto res = run_pipeline(raws, cfg);
  fs::create_directories(output);
  for (const auto& c : res.accepted) write_clip(output / (c.id + ".jsonl"), c);
  std::ofstream rep(output / "report.json");
  rep << report_to_json(res.report).dump(2) << '\n';
  if (!rep) throw std::runtime_error("cannot write report in " + output.string());
  // Clips rejected before smoothing score as infinitely deviant.
  std::map<std::string, double> scores;
  for (const auto& sc : res.scored) scores[sc.clip.id] = sc.verdict.max_deviation;
  for (const auto& r : res.report.rejections)
    if (r.reason == reason::kSpeedOutlier || r.reason == reason::kDegenerate || r.reason == reason::kDivergence)
      scores.emplace(r.clip_id, std::numeric_limits<double>::infinity());
  std::ofstream sc(output / "scores.csv");
  sc << "clip_id,source,max_deviation\n";
  sc.precision(17);
  for (const auto& [id, d] : scores) sc << id << ',' << source_of(id) << ',' << d << '\n';
  if (!sc) throw std::runtime_error("cannot write scores in " + output.string());
  return res.report;
}

std::vector<LabeledScore> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path.string() + ": missing header");
  const auto header = split_csv(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument(path.string() + ": header lacks column " + name);
    return static_cast<size_t>(it - header.begin());
  };
  const size_t cd = col("max_deviation"), cc = col("is_correct");
  std::vector<LabeledScore> out;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    const std::string& flag = cells.at(cc);
    const bool correct = flag == "1" || flag == "true" || flag == "True";
    if (!correct && flag != "0" && flag != "false" && flag != "False")
      throw std::invalid_argument(path.string() + ": is_correct must be 0/1 or true/false");
    out.push_back({std::stod(cells.at(cd)), correct});
  }
  return out;
}

}  // namespace dronecam::traj
