// Serial reference kernels against their OpenMP counterparts, plus the depth
// renderer. Arg(0) is the serial path; Arg(n) runs the parallel path on n threads.

#include <random>

#include <benchmark/benchmark.h>

#include "dronecam/kernels.hpp"
#include "dronecam/simworld.hpp"

using dronecam::Mat;
using dronecam::Vec;
namespace k = dronecam::kernels;
namespace sim = dronecam::sim;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Sequence length of a full 30-frame context.
constexpr int kTokens = 1 + 52 * 30;
constexpr int kHidden = 128;

void BM_Linear(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  const Mat x = random_mat(kTokens, kHidden, 1), w = random_mat(kHidden, 4 * kHidden, 2);
  const Vec b = Vec::Zero(4 * kHidden);
  Mat y;
  if (threads) k::set_threads(threads);
  for (auto _ : state) {
    if (threads) {
      k::linear_forward(x, w, b, y);
    } else {
      k::serial::linear_forward(x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_LinearBackward(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  const Mat x = random_mat(kTokens, kHidden, 3), dy = random_mat(kTokens, 4 * kHidden, 4);
  const Mat w = random_mat(kHidden, 4 * kHidden, 5);
  Mat dx, dw = Mat::Zero(kHidden, 4 * kHidden);
  Vec db = Vec::Zero(4 * kHidden);
  if (threads) k::set_threads(threads);
  for (auto _ : state) {
    if (threads) {
      k::linear_backward_input(dy, w, dx);
      k::linear_backward_params(x, dy, dw, db);
    } else {
      k::serial::linear_backward_input(dy, w, dx);
      k::serial::linear_backward_params(x, dy, dw, db);
    }
    benchmark::DoNotOptimize(dw.data());
  }
}

void BM_Attention(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  const Mat q = random_mat(kTokens, kHidden, 6), kk = random_mat(kTokens, kHidden, 7), v = random_mat(kTokens, kHidden, 8);
  const Mat g = random_mat(kTokens, kHidden, 9);
  Mat out, dq, dk = Mat::Zero(kTokens, kHidden), dv = Mat::Zero(kTokens, kHidden);
  std::vector<Mat> probs;
  if (threads) k::set_threads(threads);
  for (auto _ : state) {
    if (threads) {
      k::attention_forward(q, kk, v, 0, 4, out, &probs);
      k::attention_backward(g, q, kk, v, probs, 0, 4, dq, dk, dv);
    } else {
      k::serial::attention_forward(q, kk, v, 0, 4, out, &probs);
      k::serial::attention_backward(g, q, kk, v, probs, 0, 4, dq, dk, dv);
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

void BM_Render(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  sim::WorldSpec spec;
  spec.kind = sim::WorldKind::kCityBlocks;
  const sim::World w = sim::World::generate(spec);
  const sim::CameraPose pose(sim::Vec3(0, 0, 25), dronecam::geo::look_rotation(sim::Vec3(1, 0.3, -0.2)));
  if (threads) k::set_threads(threads);
  for (auto _ : state) {
    const auto d = threads ? sim::render_depth(w, pose) : sim::render_depth_serial(w, pose);
    benchmark::DoNotOptimize(d.depth.data());
  }
}

void thread_args(benchmark::internal::Benchmark* b) {
  b->Arg(0);
  for (int t = 1; t <= k::max_threads(); t *= 2) b->Arg(t);
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Linear)->Apply(thread_args);
BENCHMARK(BM_LinearBackward)->Apply(thread_args);
BENCHMARK(BM_Attention)->Apply(thread_args);
BENCHMARK(BM_Render)->Apply(thread_args);

BENCHMARK_MAIN();
