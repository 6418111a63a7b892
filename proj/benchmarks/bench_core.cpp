// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "affnet/layers.hpp"
#include "affnet/model.hpp"
#include "affnet/ops.hpp"

using namespace affnet;
using F = Tensor<float>;

namespace {

// The two heaviest layers of the network at full width.
void BM_Conv2dEyeConv2(benchmark::State& state) {
  Rng rng(1);
  F x = F::uniform({1, 24, 54, 54}, rng);
  F w = F::uniform({48, 24, 5, 5}, rng, -0.1, 0.1);
  F b = F::zeros({48});
  for (auto _ : state) {
    F out = ops::conv2d(x, w, b, 1, 0);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv2dEyeConv2);

void BM_Conv2dFaceConv2(benchmark::State& state) {
  Rng rng(2);
  F x = F::uniform({1, 48, 110, 110}, rng);
  F w = F::uniform({96, 48, 5, 5}, rng, -0.1, 0.1);
  F b = F::zeros({96});
  for (auto _ : state) {
    F out = ops::conv2d(x, w, b, 1, 0);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv2dFaceConv2);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(3);
  F x = F::uniform({1, 48, 110, 110}, rng);
  F w = F::uniform({96, 48, 5, 5}, rng, -0.1, 0.1).set_requires_grad(true);
  F b = F::zeros({96}).set_requires_grad(true);
  x.set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    F out = ops::conv2d(x, w, b, 1, 0, &tape);
    F loss = ops::reduce_sum(out, &tape);
    tape.backward(loss);
    benchmark::DoNotOptimize(w.grad());
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_GroupNorm(benchmark::State& state) {
  Rng rng(4);
  F x = F::uniform({8, 96, 52, 52}, rng);
  for (auto _ : state) {
    F out = ops::group_norm(x, 8, 1e-5);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GroupNorm);

void BM_SEBlock(benchmark::State& state) {
  Rng rng(5);
  SEParams<float> se = init_se<float>(256, rng);
  F x = F::uniform({8, 256, 10, 10}, rng);
  for (auto _ : state) {
    F out = se_forward(x, se);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_SEBlock);

void BM_QuarterForward(benchmark::State& state) {
  const ModelConfig cfg = ModelConfig{}.scaled(4);
  auto params = build<float>(cfg, 7);
  Rng rng(8);
  BatchInput<float> batch;
  const int n = static_cast<int>(state.range(0));
  batch.face = F::uniform({n, 3, 224, 224}, rng, 0, 1);
  batch.eye_left = F::uniform({n, 3, 112, 112}, rng, 0, 1);
  batch.eye_right_flipped = F::uniform({n, 3, 112, 112}, rng, 0, 1);
  batch.rects = F::uniform({n, 12}, rng, 0, 1);
  for (auto _ : state) {
    F out = forward(params, batch);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_QuarterForward)->Arg(1)->Arg(8);

void BM_QuarterTrainStep(benchmark::State& state) {
  const ModelConfig cfg = ModelConfig{}.scaled(4);
  auto params = build<float>(cfg, 7);
  Rng rng(9);
  const int n = 8;
  BatchInput<float> batch;
  batch.face = F::uniform({n, 3, 224, 224}, rng, 0, 1);
  batch.eye_left = F::uniform({n, 3, 112, 112}, rng, 0, 1);
  batch.eye_right_flipped = F::uniform({n, 3, 112, 112}, rng, 0, 1);
  batch.rects = F::uniform({n, 12}, rng, 0, 1);
  F labels = F::uniform({n, 2}, rng, -8, 18);
  for (auto _ : state) {
    Tape<float> tape;
    F pred = forward(params, batch, &tape);
    F loss = ops::smooth_l1(pred, labels, &tape);
    params.zero_grad();
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_QuarterTrainStep);

}  // namespace

int main(int argc, char** argv) {
  apply_thread_limits();
  ::benchmark::Initialize(&argc, argv);
  if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  ::benchmark::RunSpecifiedBenchmarks();
  ::benchmark::Shutdown();
  return 0;
}
