#include <cmath>

#include <gtest/gtest.h>

#include "dronecam/rollout.hpp"
#include "dronecam/synthgen.hpp"
#include "testutil.hpp"

using namespace dronecam;
using namespace dronecam::rollout;
using geo::Vec3;

namespace {

sim::World flat_world() {
  sim::WorldSpec s;
  s.kind = sim::WorldKind::kCityBlocks;
  s.obstacle_count = 0;
  return sim::World::generate(s);
}

sim::World terrain_world(std::uint64_t seed) {
  sim::WorldSpec s;
  s.seed = seed;
  return sim::World::generate(s);
}

model::ModelConfig toy_config() {
  model::ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 16;
  c.feature_dim = 8;
  c.conv_channels = 2;
  c.mlp_ratio = 2;
  c.seed = 3;
  return c;
}

data::MotionStats toy_stats() {
  data::MotionStats st;
  st.mean << 0, 0, 10, 0, 0, 0;
  st.std << 1, 1, 2, 0.1, 0.1, 0.1;
  st.world_scale = 1.5;
  return st;
}

// Builds a new transformer policy for every call, so nothing is cached.
class FreshPolicy : public Policy {
 public:
  FreshPolicy(const model::Model& m, const data::MotionStats& s) : m_(m), s_(s) {}
  Motions act(std::uint64_t seed, std::span<const ContextFrame> ctx) override {
    TransformerPolicy p(m_, s_);
    return p.act(seed, ctx);
  }
  int context_frames() const override { return m_.config().context_frames; }
  int feature_dim() const override { return m_.config().feature_dim; }

 private:
  const model::Model& m_;
  data::MotionStats s_;
};

void expect_same_trace(const EpisodeResult& a, const EpisodeResult& b) {
  ASSERT_EQ(a.poses.size(), b.poses.size());
  for (size_t i = 0; i < a.poses.size(); ++i) {
    EXPECT_EQ(a.poses[i].position, b.poses[i].position) << i;
    EXPECT_EQ(a.poses[i].orientation, b.poses[i].orientation) << i;
  }
  EXPECT_EQ(a.terminated_by, b.terminated_by);
}

TEST(Rollout, ZeroMotionHoldsStill) {
  const sim::World w = terrain_world(1);
  ConstantPolicy still;
  const auto init = synth::start_pose(w, 4);
  const auto e = run_episode(still, w, init, 0, 10.0);
  EXPECT_EQ(e.completed_frames, 30);
  EXPECT_EQ(e.frames.size(), 30u);
  ASSERT_EQ(e.poses.size(), 151u);
  EXPECT_EQ(e.motions.size(), 150u);
  EXPECT_EQ(e.poses.back().position, Vec3::Zero());
  EXPECT_LT(geo::quat_distance(e.poses.back().orientation, geo::Quat(1, 0, 0, 0)), 1e-15);
  EXPECT_EQ(e.terminated_by, Termination::kDuration);
  EXPECT_DOUBLE_EQ(e.duration_s, 10.0);
  for (size_t t = 0; t < e.frames.size(); ++t) EXPECT_EQ(e.frames[t].step, static_cast<int>(5 * t));
}

TEST(Rollout, DescentCollidesAtAnalyticStep) {
  const sim::World w = flat_world();
  const double h = 10.0, speed = 2.0, clearance = 0.2;
  geo::CameraMotion down;
  down.linear = Vec3(0, speed, 0);  // camera +y points down for a level camera
  ConstantPolicy sink(down);
  const geo::CameraPose init(Vec3(0, 0, h), geo::look_rotation(Vec3::UnitX()));
  const auto e = run_episode(sink, w, init, 0, 10.0, clearance);
  // Sub-step k ends at height h - k v / 15; the first one closer than the
  // clearance is the collision.
  const int expected = static_cast<int>(std::ceil((h - clearance) / (speed / 15.0)));
  EXPECT_EQ(e.terminated_by, Termination::kCollision);
  EXPECT_EQ(static_cast<int>(e.poses.size()) - 1, expected);
  EXPECT_EQ(e.completed_frames, (expected - 1) / 5);
  EXPECT_NEAR(e.duration_s, expected / 15.0, 1e-12);
  EXPECT_NEAR(e.poses.back().position.y(), expected * speed / 15.0, 1e-9);
}

TEST(Rollout, TraceIsFifteenFps) {
  geo::CameraMotion fwd;
  fwd.linear = Vec3(0, 0, 3);
  fwd.angular = Vec3(0, 0.1, 0);
  ConstantPolicy p(fwd);
  const auto e = run_episode(p, flat_world(), geo::CameraPose(Vec3(0, 0, 20), geo::look_rotation(Vec3::UnitX())), 0, 10);
  ASSERT_EQ(e.motions.size(), 150u);
  for (size_t i = 0; i < e.motions.size(); ++i) {
    const auto m = geo::relative_motion(e.poses[i], e.poses[i + 1], 1.0 / 15);
    EXPECT_LT((m.linear - fwd.linear).norm(), 1e-9);
    EXPECT_LT((m.angular - fwd.angular).norm(), 1e-9);
  }
}

TEST(Rollout, WindowSlides) {
  ConstantPolicy still;
  const sim::World w = terrain_world(2);
  const auto e = run_episode_windowed(still, w, synth::start_pose(w, 1), 0, 20.0);
  EXPECT_EQ(e.completed_frames, 60);
  EXPECT_EQ(e.window_slides, static_cast<int>(std::ceil((60.0 - 30.0) / 15.0)));
  EXPECT_EQ(e.slide_steps, (std::vector<int>{150, 225}));
  EXPECT_THROW(run_episode(still, w, synth::start_pose(w, 1), 0, 20.0), std::invalid_argument);
}

TEST(Rollout, WindowedEqualsPlainUpToContext) {
  const model::Model m(toy_config());
  const sim::World w = terrain_world(3);
  const auto init = synth::start_pose(w, 2);
  for (double dur : {4.0, 10.0}) {
    TransformerPolicy a(m, toy_stats()), b(m, toy_stats());
    expect_same_trace(run_episode(a, w, init, 7, dur), run_episode_windowed(b, w, init, 7, dur));
  }
}

TEST(Rollout, CacheReuseMatchesRebuild) {
  const model::Model m(toy_config());
  const sim::World w = terrain_world(4);
  const auto init = synth::start_pose(w, 3);
  TransformerPolicy cached(m, toy_stats());
  FreshPolicy fresh(m, toy_stats());
  const auto a = run_episode_windowed(cached, w, init, 11, 14.0, 12, 4);
  const auto b = run_episode_windowed(fresh, w, init, 11, 14.0, 12, 4);
  expect_same_trace(a, b);
  // One build at the start plus one per slide.
  EXPECT_EQ(cached.rebuilds(), 1 + a.window_slides);
}

TEST(Rollout, InvalidStarts) {
  const sim::World w = flat_world();
  ConstantPolicy still;
  EXPECT_THROW(run_episode(still, w, geo::CameraPose(Vec3(0, 0, 0.05), geo::Quat(1, 0, 0, 0)), 0, 5),
               std::invalid_argument);
  EXPECT_THROW(run_episode(still, w, geo::CameraPose(Vec3(0, 0, 5), geo::Quat(1, 0, 0, 0)), 0, 0), std::invalid_argument);
  EXPECT_THROW(run_episode_windowed(still, w, geo::CameraPose(Vec3(0, 0, 5), geo::Quat(1, 0, 0, 0)), 0, 5, 30, 30),
               std::invalid_argument);
}

TEST(Rollout, EpisodeJsonRoundTrip) {
  geo::CameraMotion m;
  m.linear = Vec3(0.1, 0.2, 2);
  m.angular = Vec3(0.01, -0.2, 0.03);
  ConstantPolicy p(m);
  const auto e = run_episode_windowed(p, terrain_world(5), synth::start_pose(terrain_world(5), 0), 99, 3.0);
  testutil::TempDir dir;
  write_episode(dir / "e.json", e, {{"world_spec", "x.json"}});
  const auto b = read_episode(dir / "e.json");
  expect_same_trace(e, b);
  EXPECT_EQ(b.cond_seed, 99u);
  EXPECT_EQ(b.completed_frames, e.completed_frames);
  EXPECT_EQ(b.origin.position, e.origin.position);
  ASSERT_EQ(b.frames.size(), e.frames.size());
  EXPECT_TRUE(b.frames[2].depth == e.frames[2].depth);
  ASSERT_EQ(b.motions.size(), e.motions.size());
  EXPECT_EQ(b.motions[4].angular, e.motions[4].angular);
}

TEST(Rollout, ParsePose) {
  const auto p = parse_pose("1,2,3,1,0,0,0");
  EXPECT_EQ(p.position, Vec3(1, 2, 3));
  EXPECT_THROW(parse_pose("1,2,3"), std::invalid_argument);
  EXPECT_THROW(parse_pose("1,2,3,a,0,0,0"), std::invalid_argument);
}

}  // namespace
