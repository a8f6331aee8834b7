#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dconv/harness.hpp"
#include "dconv/layer_table.hpp"
#include "dconv/reference.hpp"

using namespace dconv;

TEST_CASE("builtin table matches the published layer shapes") {
  const auto layers = builtin_resnet50(28);
  REQUIRE(layers.size() == 20);
  const ConvLayerSpec& l4 = layers[3].spec;
  CHECK(layers[3].id == 4);
  CHECK(l4.C == 64);
  CHECK(l4.K == 64);
  CHECK(l4.H == 56);
  CHECK(l4.W == 56);
  CHECK(l4.R == 3);
  CHECK(l4.S == 3);
  CHECK(l4.stride == 1);
  const ConvLayerSpec& l16 = layers[15].spec;
  CHECK(layers[15].id == 16);
  CHECK(l16.C == 1024);
  CHECK(l16.K == 2048);
  CHECK(l16.H == 14);
  CHECK(l16.W == 14);
  CHECK(l16.R == 1);
  CHECK(l16.stride == 2);
}

TEST_CASE("layer CSV parsing") {
  SUBCASE("well-formed file with and without pad columns") {
    std::stringstream ss(
        "id,C,K,H,W,R,S,stride\n"
        "1,16,32,8,8,3,3,1\n"
        "2,32,32,8,8,1,1,2,0,0\n");
    const auto layers = parse_layer_csv(ss, 2);
    REQUIRE(layers.size() == 2);
    CHECK(layers[0].spec.pad_h == 1);  // defaulted (R-1)/2
    CHECK(layers[0].spec.N == 2);
    CHECK(layers[1].spec.pad_h == 0);
    CHECK(layers[1].spec.stride == 2);
  }

  SUBCASE("empty file is a parse error") {
    std::stringstream ss("");
    CHECK_THROWS_AS(parse_layer_csv(ss, 1), ParseError);
  }

  SUBCASE("malformed rows report their line number") {
    std::stringstream ss(
        "id,C,K,H,W,R,S,stride\n"
        "1,16,32,8,8,3,3,1\n"
        "2,16,nope,8,8,3,3,1\n");
    try {
      parse_layer_csv(ss, 1);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line == 3);
    }
  }

  SUBCASE("wrong field count is rejected") {
    std::stringstream ss(
        "id,C,K,H,W,R,S,stride\n"
        "1,16,32,8,8,3,3\n");
    CHECK_THROWS_AS(parse_layer_csv(ss, 1), ParseError);
  }
}

TEST_CASE("flop accounting") {
  // layer 4 at N=28: 2*28*64*64*56*56*3*3
  const ConvLayerSpec l4 = builtin_resnet50(28)[3].spec;
  CHECK(pass_flops(l4) == 6473908224ll);

  // the instrumented counter agrees on a small layer
  const ConvLayerSpec small = make_layer_spec(2, 5, 7, 9, 9, 3, 3, 1, 8);
  CHECK(pass_flops(small) == 2 * count_forward_macs(small));
}

TEST_CASE("run_benchmark produces checked, deterministic reports") {
  BenchConfig cfg;
  cfg.layers = "resnet50";
  cfg.minibatch = 1;
  cfg.iterations = 1;
  cfg.threads = 1;
  cfg.check = true;
  cfg.vlen = 16;

  // restrict to a light subset via a temp CSV
  std::stringstream ss(
      "id,C,K,H,W,R,S,stride\n"
      "18,512,512,7,7,3,3,1\n");
  const auto layers = parse_layer_csv(ss, 1);
  REQUIRE(layers.size() == 1);

  cfg.impl = ImplKind::Direct;
  BenchConfig direct_cfg = cfg;
  BenchReport a, b;
  const std::string path = "harness_test_layers.csv";
  {
    std::ofstream out(path);
    out << "id,C,K,H,W,R,S,stride\n18,512,512,7,7,3,3,1\n";
  }
  direct_cfg.layers = path;
  a = run_benchmark(direct_cfg);
  b = run_benchmark(direct_cfg);
  REQUIRE(a.per_layer.size() == 1);
  CHECK(a.per_layer[0].samples == 1);
  CHECK(a.per_layer[0].check_ok);
  CHECK(a.all_ok);
  // deterministic given the seed: identical data, identical norms
  CHECK(a.per_layer[0].norms.linf_abs == b.per_layer[0].norms.linf_abs);
  CHECK(a.per_layer[0].flops == b.per_layer[0].flops);

  direct_cfg.impl = ImplKind::Im2col;
  const BenchReport im2col = run_benchmark(direct_cfg);
  CHECK(im2col.all_ok);

  direct_cfg.impl = ImplKind::Naive;
  const BenchReport naive = run_benchmark(direct_cfg);
  CHECK(naive.all_ok);
  CHECK(naive.per_layer[0].norms.linf_abs == 0.0);

  direct_cfg.impl = ImplKind::Direct;
  direct_cfg.pass = PassKind::Backward;
  CHECK(run_benchmark(direct_cfg).all_ok);
  direct_cfg.pass = PassKind::Update;
  direct_cfg.threads = 2;
  CHECK(run_benchmark(direct_cfg).all_ok);

  direct_cfg.pass = PassKind::Forward;
  direct_cfg.dtype = DataKind::I16;
  direct_cfg.threads = 1;
  const BenchReport i16 = run_benchmark(direct_cfg);
  CHECK(i16.all_ok);
  CHECK(i16.per_layer[0].norms.linf_abs == 0.0);

  std::remove(path.c_str());
}

TEST_CASE("report writers emit their formats") {
  BenchConfig cfg;
  const std::string path = "harness_report_layers.csv";
  {
    std::ofstream out(path);
    out << "id,C,K,H,W,R,S,stride\n3,64,64,56,56,1,1,1\n";
  }
  cfg.layers = path;
  cfg.minibatch = 1;
  cfg.check = true;
  const BenchReport report = run_benchmark(cfg);

  std::stringstream human, json, csv;
  print_report(report, human);
  CHECK(human.str().find("GFLOPS") != std::string::npos);
  write_report_json(report, json);
  CHECK(json.str().find("\"results\"") != std::string::npos);
  CHECK(json.str().find("\"gflops\"") != std::string::npos);
  write_report_csv(report, csv);
  CHECK(csv.str().find("id,C,K") == 0);
  std::remove(path.c_str());
}

TEST_CASE("chain runner") {
  Rng rng(113);

  SUBCASE("two layers with fused relu match the oracle composition") {
    // a small stand-in for the 1x1 -> 3x3 pattern
    std::vector<ChainLayer> chain;
    ChainLayer a;
    a.spec = make_layer_spec(2, 8, 16, 10, 10, 1, 1, 1, 0, 0, 8);
    a.fuse = FusedOp{FusedOpKind::RELU, {}};
    ChainLayer b;
    b.spec = make_layer_spec(2, 16, 8, 10, 10, 3, 3, 1, 8);
    b.fuse = FusedOp{FusedOpKind::RELU, {}};
    chain = {a, b};

    const TensorF input = random_f32(rng, 2, 8, 10, 10);
    std::vector<TensorF> weights;
    weights.push_back(random_f32(rng, 16, 8, 1, 1));
    weights.push_back(random_f32(rng, 8, 16, 3, 3));

    const BlockedActivation out = run_chain(chain, input, weights, 2);

    TensorF x = conv_forward_naive(a.spec, input, weights[0]);
    for (int64_t i = 0; i < x.size(); ++i)
      x.data()[i] = std::max(x.data()[i], 0.0f);
    x = conv_forward_naive(b.spec, x, weights[1]);
    for (int64_t i = 0; i < x.size(); ++i)
      x.data()[i] = std::max(x.data()[i], 0.0f);

    CHECK(error_norms(x, from_blocked_activation(out)).linf_rel <= 1e-4);
  }

  SUBCASE("a single-layer chain equals plain forward") {
    ChainLayer only;
    only.spec = make_layer_spec(1, 8, 8, 6, 6, 3, 3, 1, 8);
    const TensorF input = random_f32(rng, 1, 8, 6, 6);
    std::vector<TensorF> weights{random_f32(rng, 8, 8, 3, 3)};
    const BlockedActivation out = run_chain({only}, input, weights, 1);
    const TensorF ref = conv_forward_naive(only.spec, input, weights[0]);
    CHECK(error_norms(ref, from_blocked_activation(out)).linf_rel <= 1e-4);
  }

  SUBCASE("incompatible channel counts are rejected") {
    // layer 4 produces 64 maps, layer 13 expects 256
    const auto layers = builtin_resnet50(1);
    ChainLayer a{layers[3].spec, {}};
    ChainLayer c{layers[12].spec, {}};
    const TensorF input = random_f32(rng, 1, 64, 56, 56);
    std::vector<TensorF> weights;
    weights.push_back(random_f32(rng, 64, 64, 3, 3));
    weights.push_back(random_f32(rng, 256, 256, 3, 3));
    CHECK_THROWS_AS(run_chain({a, c}, input, weights, 1),
                    ChainShapeMismatch);
  }
}
