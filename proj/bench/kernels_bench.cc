// Serial reference kernels against the OpenMP versions the engine uses.
// Shapes follow the small-cnn victim at batch 32.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "bdlab/autograd/kernels.h"

namespace {

namespace k = bdlab::kernels;

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

// 32 x 3072 times 3072 x 128: the fc0 layer of small-cnn.
constexpr int kM = 32, kK = 3072, kN = 128;

void BM_MatmulReference(benchmark::State& st) {
  const auto a = noise(kM * kK, 1), b = noise(kK * kN, 2);
  std::vector<float> c(kM * kN);
  for (auto _ : st) {
    k::reference::matmul(kM, kK, kN, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
}

void BM_MatmulParallel(benchmark::State& st) {
  const auto a = noise(kM * kK, 1), b = noise(kK * kN, 2);
  std::vector<float> c(kM * kN);
  for (auto _ : st) {
    k::parallel::matmul(kM, kK, kN, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
}

// conv1 of small-cnn: 32 -> 64 channels on a 6 x 16 map.
k::ConvShape conv_shape() {
  k::ConvShape s;
  s.batch = 32;
  s.in_ch = 32;
  s.height = 6;
  s.width = 16;
  s.out_ch = 64;
  return s;
}

void BM_ConvForwardReference(benchmark::State& st) {
  const k::ConvShape s = conv_shape();
  const auto x = noise(s.batch * s.in_size(), 3), w = noise(s.weight_size(), 4), b = noise(s.out_ch, 5);
  std::vector<float> y(s.batch * s.out_size());
  for (auto _ : st) {
    k::reference::conv2d_forward(s, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ConvForwardParallel(benchmark::State& st) {
  const k::ConvShape s = conv_shape();
  const auto x = noise(s.batch * s.in_size(), 3), w = noise(s.weight_size(), 4), b = noise(s.out_ch, 5);
  std::vector<float> y(s.batch * s.out_size()), col(s.batch * s.col_rows() * s.col_cols());
  for (auto _ : st) {
    k::parallel::conv2d_forward(s, x.data(), w.data(), b.data(), y.data(), col.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& st) {
  const k::ConvShape s = conv_shape();
  const auto x = noise(s.batch * s.in_size(), 3), w = noise(s.weight_size(), 4);
  const auto dy = noise(s.batch * s.out_size(), 6);
  std::vector<float> dx(x.size()), dw(w.size()), db(s.out_ch);
  for (auto _ : st) {
    k::reference::conv2d_backward(s, x.data(), w.data(), dy.data(), dx.data(), dw.data(), db.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

void BM_ConvBackwardParallel(benchmark::State& st) {
  const k::ConvShape s = conv_shape();
  const auto x = noise(s.batch * s.in_size(), 3), w = noise(s.weight_size(), 4), b = noise(s.out_ch, 5);
  const auto dy = noise(s.batch * s.out_size(), 6);
  std::vector<float> y(s.batch * s.out_size()), col(s.batch * s.col_rows() * s.col_cols());
  k::parallel::conv2d_forward(s, x.data(), w.data(), b.data(), y.data(), col.data());
  std::vector<float> dx(x.size()), dw(w.size()), db(s.out_ch);
  for (auto _ : st) {
    k::parallel::conv2d_backward(s, col.data(), w.data(), dy.data(), dx.data(), dw.data(), db.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

// Pool after conv0: 32 x 32 planes of 13 x 32.
k::PoolShape pool_shape() { return {32 * 32, 13, 32, 2}; }

void BM_MaxpoolReference(benchmark::State& st) {
  const k::PoolShape s = pool_shape();
  const auto x = noise(static_cast<std::size_t>(s.planes) * s.height * s.width, 7);
  const std::size_t out = static_cast<std::size_t>(s.planes) * s.out_h() * s.out_w();
  std::vector<float> y(out);
  std::vector<int> arg(out);
  for (auto _ : st) {
    k::reference::maxpool_forward(s, x.data(), y.data(), arg.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_MaxpoolParallel(benchmark::State& st) {
  const k::PoolShape s = pool_shape();
  const auto x = noise(static_cast<std::size_t>(s.planes) * s.height * s.width, 7);
  const std::size_t out = static_cast<std::size_t>(s.planes) * s.out_h() * s.out_w();
  std::vector<float> y(out);
  std::vector<int> arg(out);
  for (auto _ : st) {
    k::parallel::maxpool_forward(s, x.data(), y.data(), arg.data());
    benchmark::DoNotOptimize(y.data());
  }
}

BENCHMARK(BM_MatmulReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvForwardReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvForwardParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MaxpoolReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MaxpoolParallel)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
