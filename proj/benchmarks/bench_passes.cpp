#include <benchmark/benchmark.h>

#include "dconv/harness.hpp"
#include "dconv/layer_table.hpp"
#include "dconv/propagation.hpp"
#include "dconv/reference.hpp"

namespace {

using namespace dconv;

ConvLayerSpec layer(int id, int minibatch) {
  return builtin_resnet50(minibatch)[id - 1].spec;
}

void report_layer(benchmark::State& state, const ConvLayerSpec& spec) {
  state.counters["GFLOPS"] = benchmark::Counter(
      static_cast<double>(pass_flops(spec)) * state.iterations() / 1e9,
      benchmark::Counter::kIsRate);
}

void BM_ForwardDirect(benchmark::State& state) {
  const ConvLayerSpec spec =
      layer(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(1);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
  const BlockedActivation ib = to_blocked_activation(input, spec);
  const BlockedWeight wb = to_blocked_weight(weight, spec);
  const ExecutionPlan plan = make_forward_plan(spec, 1);
  BlockedActivation out(spec.N, spec.K, P, Q, spec.vlen);
  for (auto _ : state) {
    forward_into(plan, ib, wb, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  report_layer(state, spec);
}
BENCHMARK(BM_ForwardDirect)
    ->Args({3, 4})
    ->Args({4, 4})
    ->Args({8, 4})
    ->Args({13, 4})
    ->Args({18, 4})
    ->Unit(benchmark::kMillisecond);

void BM_ForwardIm2col(benchmark::State& state) {
  const ConvLayerSpec spec =
      layer(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  Rng rng(1);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
  for (auto _ : state) {
    TensorF out = conv_forward_im2col(spec, input, weight);
    benchmark::DoNotOptimize(out.data());
  }
  report_layer(state, spec);
}
BENCHMARK(BM_ForwardIm2col)
    ->Args({4, 4})
    ->Args({8, 4})
    ->Unit(benchmark::kMillisecond);

void BM_ForwardNaive(benchmark::State& state) {
  const ConvLayerSpec spec =
      layer(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  Rng rng(1);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
  for (auto _ : state) {
    TensorF out = conv_forward_naive(spec, input, weight);
    benchmark::DoNotOptimize(out.data());
  }
  report_layer(state, spec);
}
BENCHMARK(BM_ForwardNaive)->Args({8, 1})->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const ConvLayerSpec spec =
      layer(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(2);
  const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
  const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
  const BlockedWeight wb = to_blocked_weight(weight, spec);
  const BackwardContext ctx = prepare_backward(spec, wb, 1);
  const int hh = ctx.route == BackwardRoute::DUALITY_STRIDE1 ? ctx.dual.pad_h : 0;
  const int hw = ctx.route == BackwardRoute::DUALITY_STRIDE1 ? ctx.dual.pad_w : 0;
  const BlockedActivation gb = to_blocked_activation(grad_out, spec.vlen, hh, hw);
  for (auto _ : state) {
    BlockedActivation grad_in = backward_with(ctx, gb);
    benchmark::DoNotOptimize(grad_in.data.data());
  }
  report_layer(state, spec);
}
BENCHMARK(BM_Backward)
    ->Args({4, 4})
    ->Args({6, 4})
    ->Args({13, 4})
    ->Unit(benchmark::kMillisecond);

void BM_WeightUpdate(benchmark::State& state) {
  const ConvLayerSpec spec =
      layer(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(3);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
  const BlockedActivation ib = to_blocked_activation(input, spec);
  const BlockedActivation gb = to_blocked_activation(grad_out, spec.vlen, 0, 0);
  const WeightUpdateStrategy strat = choose_update_strategy(spec, 1);
  const auto [bp, bq] = choose_spatial_blocking(spec);
  for (auto _ : state) {
    BlockedWeight dw = weight_update(spec, ib, gb, strat, bp, bq);
    benchmark::DoNotOptimize(dw.data.data());
  }
  report_layer(state, spec);
}
BENCHMARK(BM_WeightUpdate)
    ->Args({4, 4})
    ->Args({13, 4})
    ->Unit(benchmark::kMillisecond);

void BM_ForwardI16(benchmark::State& state) {
  const ConvLayerSpec spec =
      layer(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(4);
  const TensorI16 input = random_i16(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorI16 weight = random_i16(rng, spec.K, spec.C, spec.R, spec.S);
  const auto ib = to_blocked_activation(input, spec);
  const auto wb = to_blocked_weight(weight, spec);
  const ExecutionPlan plan =
      make_forward_plan(spec, 1, {}, {}, KernelDType::I16);
  BlockedActivationI32 out(spec.N, spec.K, P, Q, spec.vlen);
  for (auto _ : state) {
    forward_into_i16(plan, ib, wb, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  report_layer(state, spec);
}
BENCHMARK(BM_ForwardI16)
    ->Args({13, 4})
    ->Args({18, 4})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
