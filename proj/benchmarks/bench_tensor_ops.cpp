#include <benchmark/benchmark.h>

#include "poda/ops.hpp"
#include "poda/rng.hpp"

using namespace poda;

namespace {

Tensor<float> random_mat(int64_t rows, int64_t cols, Rng& rng) {
  Tensor<float> t = Tensor<float>::zeros({rows, cols});
  for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, 1.0));
  return t;
}

void BM_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  auto a = random_mat(n, n, rng);
  auto b = random_mat(n, n, rng);
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.ptr());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_matmul_backward(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(2);
  Tape<float> tape;
  auto a = random_mat(n, n, rng);
  auto b = random_mat(n, n, rng);
  a.watch(tape);
  b.watch(tape);
  for (auto _ : state) {
    tape.clear();
    a.zero_grad();
    b.zero_grad();
    auto loss = reduce_sum_all(matmul(a, b));
    backward(loss);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_matmul_backward)->Arg(64)->Arg(128);

void BM_softmax(benchmark::State& state) {
  const int64_t rows = state.range(0);
  Rng rng(3);
  auto x = random_mat(rows, 1024, rng);
  for (auto _ : state) {
    auto y = softmax(x, -1);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_softmax)->Arg(16)->Arg(128);

void BM_layer_norm(benchmark::State& state) {
  Rng rng(4);
  auto x = random_mat(state.range(0), 512, rng);
  auto gain = Tensor<float>::filled({512}, 1.0f);
  auto bias = Tensor<float>::zeros({512});
  for (auto _ : state) {
    auto y = layer_norm(x, gain, bias);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_layer_norm)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
