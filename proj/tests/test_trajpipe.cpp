#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dronecam/synthgen.hpp"
#include "dronecam/trajpipe.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dronecam;
using namespace dronecam::traj;
using geo::Quat;
using geo::Vec3;

namespace {

Clip line_clip(int n, double spacing, const Vec3& dir = Vec3(1, 0, 0)) {
  Clip c;
  c.id = "line";
  for (int i = 0; i < n; ++i) c.poses.emplace_back(spacing * i * dir.normalized(), Quat(1, 0, 0, 0));
  return c;
}

Clip from_steps(const std::vector<double>& steps) {
  Clip c;
  c.id = "steps";
  double x = 0;
  c.poses.emplace_back(Vec3::Zero(), Quat(1, 0, 0, 0));
  for (double s : steps) c.poses.emplace_back(Vec3(x += s, 0, 0), Quat(1, 0, 0, 0));
  return c;
}

double max_step(const Clip& c) {
  double m = 0;
  for (size_t i = 1; i < c.poses.size(); ++i) m = std::max(m, (c.poses[i].position - c.poses[i - 1].position).norm());
  return m;
}

TEST(Normalize, UniformSpacingBecomesOne) {
  const Clip c = normalize_scale(line_clip(20, 0.25));
  for (size_t i = 1; i < c.poses.size(); ++i)
    EXPECT_NEAR((c.poses[i].position - c.poses[i - 1].position).norm(), 1.0, 1e-12);
  EXPECT_NEAR(c.scale_factor, 4.0, 1e-12);
}

TEST(Normalize, IdempotentAndScaleInvariant) {
  std::mt19937_64 rng(3);
  Clip c;
  for (int i = 0; i < 40; ++i) c.poses.push_back(oracle::random_pose(rng));
  const Clip a = normalize_scale(c);
  const Clip again = normalize_scale(a);
  EXPECT_NEAR(again.scale_factor, a.scale_factor, 1e-12);
  for (size_t i = 0; i < a.poses.size(); ++i) EXPECT_LT((a.poses[i].position - again.poses[i].position).norm(), 1e-12);
  Clip scaled = c;
  for (auto& p : scaled.poses) p.position *= 37.5;
  const Clip b = normalize_scale(scaled);
  for (size_t i = 0; i < a.poses.size(); ++i) {
    EXPECT_LT((a.poses[i].position - b.poses[i].position).norm(), 1e-9);
    EXPECT_EQ(a.poses[i].orientation, b.poses[i].orientation);
  }
}

TEST(Normalize, StaticClipIsDegenerate) {
  Clip c;
  c.poses.assign(10, geo::CameraPose());
  EXPECT_THROW(normalize_scale(c), DegenerateClip);
}

TEST(SpeedCheck, Rule) {
  EXPECT_TRUE(speed_outlier_check(line_clip(30, 0.7)));
  EXPECT_FALSE(speed_outlier_check(from_steps({1, 1, 1, 1, 10, 1})));
  // max = 6, mean = 2: exactly three times the mean passes.
  EXPECT_TRUE(speed_outlier_check(from_steps({1, 1, 1, 1, 6})));
  EXPECT_FALSE(speed_outlier_check(from_steps({1, 1, 1, 1, 6.001})));
}

TEST(Ukf, NearIdentityOnCleanLinearMotion) {
  const Clip c = normalize_scale(line_clip(150, 0.3, Vec3(1, 2, -0.5)));
  const Clip s = ukf_smooth(c);
  ASSERT_EQ(s.poses.size(), c.poses.size());
  for (size_t i = 0; i < c.poses.size(); ++i) {
    EXPECT_LT((s.poses[i].position - c.poses[i].position).norm(), 0.02);
    EXPECT_NEAR(s.poses[i].orientation.norm(), 1.0, 1e-9);
  }
}

TEST(Ukf, JumpStandsOutAgainstLineFit) {
  Clip c = normalize_scale(line_clip(150, 1.0));
  const size_t bad = 70;
  c.poses[bad].position += Vec3(0, 5, 0);
  const Clip s = ukf_smooth(c);
  // Least-squares line through all measured positions.
  const int n = static_cast<int>(c.poses.size());
  Eigen::MatrixXd a(n, 2);
  Eigen::MatrixXd y(n, 3);
  for (int i = 0; i < n; ++i) {
    a(i, 0) = 1;
    a(i, 1) = i;
    y.row(i) = c.poses[static_cast<size_t>(i)].position.transpose();
  }
  const Eigen::MatrixXd coef = a.colPivHouseholderQr().solve(y);
  auto line_at = [&](int i) { return Vec3(coef(0, 0) + coef(1, 0) * i, coef(0, 1) + coef(1, 1) * i, coef(0, 2) + coef(1, 2) * i); };
  const double measured_off = (c.poses[bad].position - line_at(static_cast<int>(bad))).norm();
  const double smoothed_off = (s.poses[bad].position - line_at(static_cast<int>(bad))).norm();
  EXPECT_LT(smoothed_off, measured_off);
  const auto v = deviation_score(c, s);
  EXPECT_GT(v.per_frame_deviation[bad], 1.0);
  EXPECT_FALSE(v.accepted);
}

TEST(Ukf, StationaryClipIsFixedPoint) {
  Clip c;
  const geo::CameraPose p(Vec3(1, 2, 3), Quat(0.9, 0.1, -0.3, 0.2));
  c.poses.assign(40, p);
  const Clip s = ukf_smooth(c);
  for (const auto& q : s.poses) {
    EXPECT_LT((q.position - p.position).norm(), 1e-6);
    EXPECT_LT(geo::quat_distance(q.orientation, p.orientation), 1e-6);
  }
}

TEST(Deviation, Definition) {
  const Clip c = line_clip(30, 1.0);
  const auto same = deviation_score(c, c);
  EXPECT_EQ(same.max_deviation, 0.0);
  EXPECT_TRUE(same.accepted);
  Clip off = c;
  off.poses[12].position.z() += 0.3;
  const auto v = deviation_score(c, off);
  EXPECT_NEAR(v.max_deviation, 0.3, 1e-15);
  EXPECT_FALSE(v.accepted);
  Clip shorter = c;
  shorter.poses.pop_back();
  EXPECT_THROW(deviation_score(c, shorter), std::invalid_argument);
}

TEST(Threshold, SeparableMidpoint) {
  const auto t = select_threshold({{0.05, true}, {0.10, true}, {0.50, false}, {0.90, false}});
  EXPECT_NEAR(t.threshold, 0.30, 1e-15);
  EXPECT_EQ(t.youden_j, 1.0);
}

TEST(Threshold, DegenerateTie) {
  const auto t = select_threshold({{0.1, true}, {0.1, false}});
  EXPECT_EQ(t.youden_j, 0.0);
  EXPECT_EQ(t.threshold, 0.1);
  EXPECT_THROW(select_threshold({{0.1, true}, {0.2, true}}), std::invalid_argument);
}

TEST(Threshold, MatchesBruteForceOnOverlap) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> good(0.1, 0.05), bad(0.25, 0.08);
  std::vector<LabeledScore> s;
  for (int i = 0; i < 100; ++i) s.push_back({good(rng), true});
  for (int i = 0; i < 100; ++i) s.push_back({bad(rng), false});
  // Brute force: every midpoint, full recount, smallest threshold on ties.
  std::vector<double> v;
  for (const auto& x : s) v.push_back(x.max_deviation);
  std::sort(v.begin(), v.end());
  double best_j = -2, best_t = 0;
  for (size_t i = 0; i + 1 < v.size(); ++i) {
    if (v[i] == v[i + 1]) continue;
    const double thr = 0.5 * (v[i] + v[i + 1]);
    double tp = 0, fp = 0;
    for (const auto& x : s) {
      if (x.max_deviation <= thr) (x.is_correct ? tp : fp) += 1;
    }
    const double j = tp / 100 - fp / 100;
    if (j > best_j) {
      best_j = j;
      best_t = thr;
    }
  }
  const auto t = select_threshold(s);
  EXPECT_EQ(t.threshold, best_t);
  EXPECT_NEAR(t.youden_j, best_j, 1e-15);
  // Input order does not matter.
  std::shuffle(s.begin(), s.end(), rng);
  EXPECT_EQ(select_threshold(s).threshold, best_t);
  std::vector<double> correct, incorrect;
  for (const auto& x : s) (x.is_correct ? correct : incorrect).push_back(x.max_deviation);
  EXPECT_NEAR(roc_auc(s), oracle::auc_pairs(correct, incorrect), 1e-12);
}

TEST(Segment, TenSecondChunksAndShortTailDropped) {
  std::vector<geo::CameraPose> traj = line_clip(15 * 23 + 7, 0.5).poses;
  const auto clips = segment_clips(traj, 15, "t");
  ASSERT_EQ(clips.size(), 3u);  // 150 + 150 + 52
  EXPECT_EQ(clips[2].poses.size(), 52u);
  EXPECT_EQ(clips[0].id, "t_s0");
  traj = line_clip(150 + 14, 0.5).poses;
  EXPECT_EQ(segment_clips(traj, 15, "t").size(), 1u);
  traj = line_clip(150 + 15, 0.5).poses;
  EXPECT_EQ(segment_clips(traj, 15, "t").size(), 2u);
}

std::vector<RawTrajectory> expert_raws(int clean, int corrupted, double magnitude) {
  synth::CorpusConfig cfg;
  cfg.worlds = 3;
  cfg.clips_per_world = (clean + corrupted + 2) / 3;
  cfg.seed = 77;
  const auto corpus = synth::generate_corpus(cfg);
  std::vector<RawTrajectory> raws;
  for (int i = 0; i < clean + corrupted; ++i) {
    const auto& e = corpus.clips.at(static_cast<size_t>(i));
    auto poses = e.clip.poses;
    if (i >= clean) poses = synth::corrupt_clip(e.clip, synth::CorruptMode::kJump, magnitude, 900 + i).poses;
    raws.push_back({(i >= clean ? "bad_" : "good_") + std::to_string(i), poses, {}});
  }
  return raws;
}

TEST(Pipeline, CleanAcceptedCorruptedRejected) {
  const auto raws = expert_raws(10, 10, 1.0);
  const auto res = run_pipeline(raws, {});
  int good = 0, bad = 0;
  for (const auto& c : res.accepted) (c.id.rfind("good_", 0) == 0 ? good : bad)++;
  EXPECT_EQ(good, 10);
  EXPECT_LE(bad, 1);
}

TEST(Pipeline, JumpCorpusSeparatesWithHighAuc) {
  const auto raws = expert_raws(50, 50, 1.0);
  const auto res = run_pipeline(raws, {});
  std::vector<LabeledScore> s;
  std::vector<double> correct, incorrect;
  for (const auto& sc : res.scored) {
    const bool ok = sc.clip.id.rfind("good_", 0) == 0;
    s.push_back({sc.verdict.max_deviation, ok});
    (ok ? correct : incorrect).push_back(sc.verdict.max_deviation);
  }
  ASSERT_EQ(s.size(), 100u);
  EXPECT_GE(oracle::auc_pairs(correct, incorrect), 0.95);
  EXPECT_NEAR(roc_auc(s), oracle::auc_pairs(correct, incorrect), 1e-12);
}

TEST(Pipeline, EmptyInput) {
  const auto res = run_pipeline({}, {});
  EXPECT_TRUE(res.accepted.empty());
  EXPECT_EQ(res.report.accepted, 0);
  for (const auto& [k, v] : res.report.counts) EXPECT_EQ(v, 0) << k;
}

TEST(Pipeline, SpeedOutlierNeverReachesFilter) {
  std::vector<double> steps(40, 1.0);
  steps[20] = 10.0;
  RawTrajectory r{"fast", from_steps(steps).poses, {}};
  const auto res = run_pipeline({r}, {});
  EXPECT_EQ(res.report.counts.at(reason::kSpeedOutlier), 1);
  EXPECT_TRUE(res.scored.empty());
  ASSERT_EQ(res.report.rejections.size(), 1u);
  EXPECT_FALSE(res.report.rejections[0].max_deviation.has_value());
}

TEST(Pipeline, LoadErrorsAreReportedAndSkipped) {
  RawTrajectory broken{"broken", {}, std::string("parse error")};
  RawTrajectory ok{"ok", line_clip(40, 0.5).poses, {}};
  const auto res = run_pipeline({broken, ok}, {});
  EXPECT_EQ(res.report.counts.at(reason::kIoError), 1);
  EXPECT_EQ(res.accepted.size(), 1u);
}

TEST(Pipeline, DirectoryRunIsByteDeterministic) {
  testutil::TempDir dir;
  const auto raws = expert_raws(4, 2, 1.0);
  std::filesystem::create_directories(dir / "in");
  for (const auto& r : raws) write_trajectory_csv(dir / "in" / (r.id + ".csv"), r.poses);
  PipelineConfig cfg;
  filter_directory(dir / "in", dir / "a", cfg);
  cfg.jobs = 3;
  filter_directory(dir / "in", dir / "b", cfg);
  for (const auto& e : std::filesystem::directory_iterator(dir / "a"))
    EXPECT_EQ(testutil::slurp(e.path()), testutil::slurp(dir / "b" / e.path().filename())) << e.path();
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "scores.csv"));
}

TEST(Io, TrajectoryAndClipRoundTrip) {
  testutil::TempDir dir;
  std::mt19937_64 rng(5);
  Clip c;
  c.id = "rt";
  c.scale_factor = 2.5;
  for (int i = 0; i < 20; ++i) c.poses.push_back(oracle::random_pose(rng));
  write_trajectory_csv(dir / "t.csv", c.poses);
  const auto back = read_trajectory(dir / "t.csv");
  ASSERT_EQ(back.size(), c.poses.size());
  for (size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].position, c.poses[i].position);
    EXPECT_EQ(back[i].orientation, c.poses[i].orientation);
  }
  write_clip(dir / "c.jsonl", c);
  const Clip rc = read_clip(dir / "c.jsonl");
  EXPECT_EQ(rc.id, c.id);
  EXPECT_EQ(rc.scale_factor, c.scale_factor);
  ASSERT_EQ(rc.poses.size(), c.poses.size());
  for (size_t i = 0; i < rc.poses.size(); ++i) EXPECT_EQ(rc.poses[i].position, c.poses[i].position);

  std::ofstream(dir / "j.jsonl") << "{\"frame_index\":1,\"x\":1,\"y\":0,\"z\":0,\"qw\":1,\"qx\":0,\"qy\":0,\"qz\":0}\n"
                                 << "{\"frame_index\":0,\"x\":0,\"y\":0,\"z\":0,\"qw\":1,\"qx\":0,\"qy\":0,\"qz\":0}\n";
  const auto j = read_trajectory(dir / "j.jsonl");
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0].position.x(), 0.0);
  std::ofstream(dir / "bad.csv") << "x,y\n1,2\n";
  EXPECT_THROW(read_trajectory(dir / "bad.csv"), std::runtime_error);
}

TEST(Io, LabelsFile) {
  testutil::TempDir dir;
  std::ofstream(dir / "l.csv") << "clip_id,max_deviation,is_correct\na,0.1,1\nb,inf,0\n";
  const auto l = read_labels(dir / "l.csv");
  ASSERT_EQ(l.size(), 2u);
  EXPECT_TRUE(l[0].is_correct);
  EXPECT_TRUE(std::isinf(l[1].max_deviation));
}

}  // namespace
