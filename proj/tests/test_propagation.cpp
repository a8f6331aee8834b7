#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dconv/harness.hpp"
#include "dconv/layer_table.hpp"
#include "dconv/propagation.hpp"
#include "dconv/reference.hpp"

using namespace dconv;

namespace {

double dot_f(const TensorF& a, const TensorF& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a.data()[i]) * b.data()[i];
  return acc;
}

TensorF engine_forward(const ConvLayerSpec& spec, const TensorF& input,
                       const TensorF& weight, int threads) {
  const ExecutionPlan plan = make_forward_plan(spec, threads);
  const BlockedActivation ib = to_blocked_activation(input, spec);
  const BlockedWeight wb = to_blocked_weight(weight, spec);
  return from_blocked_activation(forward(spec, ib, wb, plan));
}

TensorF engine_backward(const ConvLayerSpec& spec, const TensorF& grad_out,
                        const TensorF& weight, int threads) {
  const BlockedWeight wb = to_blocked_weight(weight, spec);
  const BlockedActivation gb =
      to_blocked_activation(grad_out, spec.vlen, 0, 0);
  return from_blocked_activation(backward(spec, gb, wb, threads));
}

TensorF engine_update(const ConvLayerSpec& spec, const TensorF& input,
                      const TensorF& grad_out, int threads, int copies) {
  const BlockedActivation ib = to_blocked_activation(input, spec);
  const BlockedActivation gb =
      to_blocked_activation(grad_out, spec.vlen, 0, 0);
  const WeightUpdateStrategy strat =
      make_update_strategy(spec, threads, copies);
  const auto [bp, bq] = choose_spatial_blocking(spec);
  return from_blocked_weight(
      weight_update(spec, ib, gb, strat, bp, bq));
}

}  // namespace

TEST_CASE("forward matches the naive oracle") {
  const ConvLayerSpec spec = make_layer_spec(2, 24, 16, 12, 12, 3, 3, 1, 8);
  Rng rng(71);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
  const TensorF ref = conv_forward_naive(spec, input, weight);
  const TensorF got = engine_forward(spec, input, weight, 2);
  const ErrorNorms n = error_norms(ref, got);
  CHECK(n.linf_rel <= 1e-4);
  CHECK(n.l2_rel <= 1e-5);
}

TEST_CASE("forward matches naive at vlen 4 and the dynamic fallback") {
  for (const int vlen : {4, 5}) {
    CAPTURE(vlen);
    const ConvLayerSpec spec =
        make_layer_spec(1, 11, 9, 9, 9, 3, 3, 1, vlen);
    Rng rng(307 + vlen);
    const TensorF input = random_f32(rng, 1, 11, 9, 9);
    const TensorF weight = random_f32(rng, 9, 11, 3, 3);
    const TensorF ref = conv_forward_naive(spec, input, weight);
    const TensorF got = engine_forward(spec, input, weight, 1);
    CHECK(error_norms(ref, got).linf_rel <= 1e-4);
  }
}

TEST_CASE("identity 1x1 weights reproduce the input exactly") {
  const int vlen = 8;
  const ConvLayerSpec spec =
      make_layer_spec(1, vlen, vlen, 6, 6, 1, 1, 1, 0, 0, vlen);
  Rng rng(73);
  const TensorF input = random_f32(rng, 1, vlen, 6, 6);
  TensorF ident(vlen, vlen, 1, 1);
  for (int k = 0; k < vlen; ++k) ident(k, k, 0, 0) = 1.0f;
  const TensorF out = engine_forward(spec, input, ident, 1);
  CHECK(out == input);
}

TEST_CASE("tail lanes beyond K stay exactly zero through the pass") {
  const ConvLayerSpec spec = make_layer_spec(1, 5, 5, 8, 8, 3, 3, 1, 8);
  Rng rng(77);
  const TensorF input = random_f32(rng, 1, 5, 8, 8);
  const TensorF weight = random_f32(rng, 5, 5, 3, 3);
  const ExecutionPlan plan = make_forward_plan(spec, 1);
  const BlockedActivation ib = to_blocked_activation(input, spec);
  const BlockedWeight wb = to_blocked_weight(weight, spec);
  const BlockedActivation out = forward(spec, ib, wb, plan);
  for (int y = 0; y < out.hp(); ++y)
    for (int x = 0; x < out.wp(); ++x)
      for (int v = 5; v < 8; ++v) CHECK(out.at(0, 0, y, x)[v] == 0.0f);
}

TEST_CASE("zero input gives zero output") {
  const ConvLayerSpec spec = make_layer_spec(1, 16, 16, 8, 8, 3, 3, 1, 16);
  const TensorF input(1, 16, 8, 8);
  Rng rng(79);
  const TensorF weight = random_f32(rng, 16, 16, 3, 3);
  const TensorF out = engine_forward(spec, input, weight, 1);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0f);
}

TEST_CASE("weight transform") {
  Rng rng(83);
  SUBCASE("R=S=1 is a pure channel transpose") {
    TensorF w(8, 16, 1, 1);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.next_f32();
    const BlockedWeight wb = to_blocked_weight(w, 8);
    const BlockedWeight wt = transform_weight_stride1(wb);
    const TensorF back = from_blocked_weight(wt);
    for (int k = 0; k < 8; ++k)
      for (int c = 0; c < 16; ++c) CHECK(back(c, k, 0, 0) == w(k, c, 0, 0));
  }

  SUBCASE("the transform is an involution") {
    TensorF w(24, 16, 3, 3);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.next_f32();
    const BlockedWeight wb = to_blocked_weight(w, 8);
    const BlockedWeight twice =
        transform_weight_stride1(transform_weight_stride1(wb));
    CHECK(twice.data == wb.data);
  }
}

TEST_CASE("backward routes agree with the naive oracle") {
  Rng rng(89);

  SUBCASE("stride 1 goes through the forward duality") {
    const ConvLayerSpec spec = make_layer_spec(2, 16, 24, 10, 10, 3, 3, 1, 8);
    CHECK(choose_backward_route(spec) == BackwardRoute::DUALITY_STRIDE1);
    const auto [P, Q] = derive_output_shape(spec);
    const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
    const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
    const TensorF ref = conv_backward_naive(spec, grad_out, weight);
    const TensorF got = engine_backward(spec, grad_out, weight, 2);
    CHECK(error_norms(ref, got).linf_rel <= 1e-4);
  }

  SUBCASE("1x1 stride 2 scatters onto the stride lattice") {
    const ConvLayerSpec spec =
        make_layer_spec(2, 16, 24, 12, 12, 1, 1, 2, 0, 0, 8);
    CHECK(choose_backward_route(spec) == BackwardRoute::DUALITY_1x1);
    const auto [P, Q] = derive_output_shape(spec);
    const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
    const TensorF weight = random_f32(rng, spec.K, spec.C, 1, 1);
    const TensorF ref = conv_backward_naive(spec, grad_out, weight);
    const TensorF got = engine_backward(spec, grad_out, weight, 2);
    CHECK(error_norms(ref, got).linf_rel <= 1e-4);
    // the scatter plan passes validation (offsets on the stride lattice)
    const BackwardContext ctx =
        prepare_backward(spec, to_blocked_weight(weight, spec), 2);
    REQUIRE(ctx.plan.has_value());
    CHECK(validate_plan(*ctx.plan).ok());
    // off-lattice entries are exactly zero
    for (int n = 0; n < spec.N; ++n)
      for (int c = 0; c < spec.C; ++c)
        for (int y = 0; y < spec.H; ++y)
          for (int x = 0; x < spec.W; ++x)
            if (y % 2 != 0 || x % 2 != 0) CHECK(got(n, c, y, x) == 0.0f);
  }

  SUBCASE("R=3 stride 2 falls back to the generic GEMM loop nest") {
    const ConvLayerSpec spec =
        make_layer_spec(2, 16, 16, 11, 11, 3, 3, 2, 0, 0, 8);
    CHECK(choose_backward_route(spec) == BackwardRoute::GENERIC_GEMM);
    const auto [P, Q] = derive_output_shape(spec);
    const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
    const TensorF weight = random_f32(rng, spec.K, spec.C, 3, 3);
    const TensorF ref = conv_backward_naive(spec, grad_out, weight);
    const TensorF got = engine_backward(spec, grad_out, weight, 2);
    CHECK(error_norms(ref, got).linf_rel <= 1e-4);
  }

  SUBCASE("generic route also handles padded strided layers") {
    const ConvLayerSpec spec =
        make_layer_spec(1, 8, 8, 9, 9, 3, 3, 2, 1, 1, 8);
    CHECK(choose_backward_route(spec) == BackwardRoute::GENERIC_GEMM);
    const auto [P, Q] = derive_output_shape(spec);
    const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
    const TensorF weight = random_f32(rng, spec.K, spec.C, 3, 3);
    const TensorF ref = conv_backward_naive(spec, grad_out, weight);
    const TensorF got = engine_backward(spec, grad_out, weight, 1);
    CHECK(error_norms(ref, got).linf_rel <= 1e-4);
  }
}

TEST_CASE("weight update strategies agree with each other and the oracle") {
  const ConvLayerSpec spec = make_layer_spec(4, 16, 16, 12, 12, 3, 3, 1, 8);
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(97);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
  const TensorF ref = conv_update_naive(spec, input, grad_out);

  const TensorF task = engine_update(spec, input, grad_out, 4, 1);
  const TensorF hybrid = engine_update(spec, input, grad_out, 4, 2);
  const TensorF copy = engine_update(spec, input, grad_out, 4, 4);

  CHECK(error_norms(ref, task).linf_rel <= 1e-4);
  CHECK(error_norms(ref, hybrid).linf_rel <= 1e-4);
  CHECK(error_norms(ref, copy).linf_rel <= 1e-4);
  CHECK(error_norms(task, hybrid).linf_rel <= 1e-4);
  CHECK(error_norms(task, copy).linf_rel <= 1e-4);

  // bitwise reproducibility at a fixed strategy
  CHECK(engine_update(spec, input, grad_out, 4, 2) == hybrid);

  // N=1, T=1: all strategies share one accumulator and coincide bitwise
  ConvLayerSpec single = spec;
  single.N = 1;
  const TensorF in1 = random_f32(rng, 1, spec.C, spec.H, spec.W);
  const TensorF go1 = random_f32(rng, 1, spec.K, P, Q);
  CHECK(engine_update(single, in1, go1, 1, 1) ==
        engine_update(single, in1, go1, 1, 1));
}

TEST_CASE("all feasible strategies agree on every layer at T in {1,2,4}") {
  Rng rng(211);
  for (const LayerEntry& e : builtin_resnet50(4)) {
    const ConvLayerSpec& s = e.spec;
    const auto [P, Q] = derive_output_shape(s);
    const TensorF input = random_f32(rng, s.N, s.C, s.H, s.W);
    const TensorF grad_out = random_f32(rng, s.N, s.K, P, Q);
    std::optional<TensorF> first;
    for (const int t_count : {1, 2, 4})
      for (const int g : {1, 2, 4}) {
        if (g > t_count || t_count % g != 0) continue;
        const TensorF dw = engine_update(s, input, grad_out, t_count, g);
        if (!first) {
          first = dw;
          continue;
        }
        const ErrorNorms n = error_norms(*first, dw);
        CAPTURE(e.id);
        CAPTURE(t_count);
        CAPTURE(g);
        CHECK(n.linf_rel <= 1e-4);
      }
  }
}

TEST_CASE("gradient tensors keep tail lanes zero") {
  // C=5, K=6 against vlen=8 leaves tails in both channel dimensions
  const ConvLayerSpec spec = make_layer_spec(2, 5, 6, 8, 8, 3, 3, 1, 8);
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(223);
  const TensorF input = random_f32(rng, 2, 5, 8, 8);
  const TensorF weight = random_f32(rng, 6, 5, 3, 3);
  const TensorF grad_out = random_f32(rng, 2, 6, P, Q);

  const BlockedWeight wb = to_blocked_weight(weight, spec);
  const BlockedActivation gb = to_blocked_activation(grad_out, 8, 0, 0);
  const BlockedActivation grad_in = backward(spec, gb, wb, 2);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < grad_in.hp(); ++y)
      for (int x = 0; x < grad_in.wp(); ++x)
        for (int v = 5; v < 8; ++v)
          CHECK(grad_in.at(n, 0, y, x)[v] == 0.0f);

  const BlockedActivation ib = to_blocked_activation(input, spec);
  const BlockedWeight dw = weight_update(
      spec, ib, gb, make_update_strategy(spec, 2, 2), 1, 1);
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s)
      for (int c = 0; c < 8; ++c)
        for (int k = 0; k < 8; ++k)
          if (c >= 5 || k >= 6)
            CHECK(dw.at(0, 0, r, s)[c * 8 + k] == 0.0f);
}

TEST_CASE("zero grad_out gives zero dW") {
  const ConvLayerSpec spec = make_layer_spec(2, 8, 8, 8, 8, 3, 3, 1, 8);
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(101);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF grad_out(spec.N, spec.K, P, Q);
  const TensorF dw = engine_update(spec, input, grad_out, 2, 2);
  for (int64_t i = 0; i < dw.size(); ++i) CHECK(dw.data()[i] == 0.0f);
}

TEST_CASE("reduce_weight_copies") {
  Rng rng(103);

  SUBCASE("G=1 is the identity") {
    WeightGradCopies copies;
    copies.copies.emplace_back(8, 8, 3, 3, 8);
    for (auto& v : copies.copies[0].data) v = rng.next_f32();
    const BlockedWeight out = reduce_weight_copies(copies, 4);
    CHECK(out.data == copies.copies[0].data);
  }

  SUBCASE("fixed order makes repeated reductions bitwise identical") {
    WeightGradCopies copies;
    for (int g = 0; g < 5; ++g) {
      copies.copies.emplace_back(8, 8, 3, 3, 8);
      for (auto& v : copies.copies[g].data) v = rng.next_f32();
    }
    const BlockedWeight a = reduce_weight_copies(copies, 3);
    const BlockedWeight b = reduce_weight_copies(copies, 3);
    CHECK(a.data == b.data);
    // thread count must not change the result
    const BlockedWeight c = reduce_weight_copies(copies, 1);
    CHECK(a.data == c.data);
  }

  SUBCASE("f32 sum stays within G ulps of the f64 reference") {
    const int g_count = 6;
    WeightGradCopies copies;
    for (int g = 0; g < g_count; ++g) {
      copies.copies.emplace_back(4, 4, 1, 1, 4);
      for (auto& v : copies.copies[g].data) v = rng.next_f32();
    }
    const BlockedWeight out = reduce_weight_copies(copies, 2);
    for (size_t e = 0; e < out.data.size(); ++e) {
      double exact = 0.0;
      for (int g = 0; g < g_count; ++g) exact += copies.copies[g].data[e];
      const double ulp = std::fabs(exact) * 1.2e-7;
      CHECK(std::fabs(out.data[e] - exact) <= g_count * std::max(ulp, 1e-12));
    }
  }
}

TEST_CASE("adjoint consistency of the engine passes in f32") {
  const ConvLayerSpec spec = make_layer_spec(2, 16, 16, 10, 10, 3, 3, 1, 8);
  const auto [P, Q] = derive_output_shape(spec);
  Rng rng(107);
  const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
  const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
  const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);

  const TensorF out = engine_forward(spec, input, weight, 2);
  const TensorF grad_in = engine_backward(spec, grad_out, weight, 2);
  const TensorF grad_w = engine_update(spec, input, grad_out, 2, 2);

  const double a = dot_f(grad_out, out);
  const double b = dot_f(grad_in, input);
  const double c = dot_f(grad_w, weight);
  const double scale = std::max({1.0, std::fabs(a)});
  CHECK(std::fabs(a - b) / scale <= 1e-3);
  CHECK(std::fabs(a - c) / scale <= 1e-3);
}

TEST_CASE("strategy feasibility errors") {
  const ConvLayerSpec spec = make_layer_spec(4, 8, 8, 8, 8, 3, 3, 1, 8);
  const BlockedActivation ib(spec.N, spec.C, spec.H, spec.W, 8, 1, 1);
  const BlockedActivation gb(spec.N, spec.K, 8, 8, 8);
  WeightUpdateStrategy bad;
  bad.threads = 4;
  bad.copies = 3;  // does not divide
  CHECK_THROWS_AS(weight_update(spec, ib, gb, bad, 1, 1), InfeasibleStrategy);
  CHECK_THROWS_AS(
      weight_update(spec, ib, gb, make_update_strategy(spec, 2, 1), 3, 1),
      InfeasibleStrategy);  // 3 does not divide P=8
}
