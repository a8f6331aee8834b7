#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dconv/harness.hpp"

namespace {

int run_chain_mode(const dconv::BenchConfig& cfg) {
  using namespace dconv;
  const auto layers = load_layers(cfg.layers, cfg.minibatch, cfg.vlen);
  Rng rng(cfg.seed);
  std::vector<ChainLayer> chain;
  std::vector<TensorF> weights;
  for (const LayerEntry& entry : layers) {
    ChainLayer cl;
    cl.spec = entry.spec;
    if (cfg.fuse) {
      FusedOp op;
      op.kind = *cfg.fuse;
      if (op.kind != FusedOpKind::RELU) {
        op.bias.resize(entry.spec.K);
        for (float& b : op.bias) b = rng.next_f32();
      }
      cl.fuse = op;
    }
    chain.push_back(cl);
    weights.push_back(random_f32(rng, entry.spec.K, entry.spec.C, entry.spec.R,
                                 entry.spec.S));
  }
  const ConvLayerSpec& first = layers.front().spec;
  const TensorF input =
      random_f32(rng, cfg.minibatch, first.C, first.H, first.W);

  const BlockedActivation out =
      run_chain(chain, input, weights, cfg.threads, cfg.engine);
  std::cout << "chain of " << chain.size() << " layers -> output ["
            << out.n << "," << out.c << "," << out.h << "," << out.w << "]\n";

  if (cfg.check) {
    TensorF x = input;
    for (size_t i = 0; i < chain.size(); ++i) {
      ConvLayerSpec s = chain[i].spec;
      s.N = cfg.minibatch;
      x = conv_forward_naive(s, x, weights[i]);
      if (chain[i].fuse) {
        for (int64_t e = 0; e < x.size(); ++e) {
          float v = x.data()[e];
          if (chain[i].fuse->kind != FusedOpKind::RELU)
            v += chain[i].fuse->bias[(e / (x.dim(2) * x.dim(3))) % x.dim(1)];
          if (chain[i].fuse->kind != FusedOpKind::BIAS_ADD)
            v = v > 0.0f ? v : 0.0f;
          x.data()[e] = v;
        }
      }
    }
    const ErrorNorms norms = error_norms(x, from_blocked_activation(out));
    std::cout << "check vs oracle composition: linf_rel=" << norms.linf_rel
              << " l2_rel=" << norms.l2_rel << "\n";
    if (norms.linf_rel > 1e-4) {
      std::cerr << "chain check FAILED\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dconv;

  CLI::App app{"direct convolution layer benchmark"};
  BenchConfig cfg;

  std::string pass = "F", dtype = "f32", impl = "direct", fuse = "none";
  std::string out_json, out_csv;
  bool chain_mode = false;

  app.add_option("--layers", cfg.layers,
                 "builtin table name (resnet50) or layer CSV path");
  app.add_option("--minibatch", cfg.minibatch, "minibatch size N")
      ->check(CLI::PositiveNumber);
  app.add_option("--iters", cfg.iterations, "timed repetitions per layer")
      ->check(CLI::PositiveNumber);
  app.add_option("--pass", pass, "F | B | U")
      ->check(CLI::IsMember({"F", "B", "U"}));
  app.add_option("--dtype", dtype, "f32 | i16")
      ->check(CLI::IsMember({"f32", "i16"}));
  app.add_option("--impl", impl, "naive | im2col | direct")
      ->check(CLI::IsMember({"naive", "im2col", "direct"}));
  app.add_option("--threads", cfg.threads, "worker thread count")
      ->check(CLI::PositiveNumber);
  app.add_flag("--check", cfg.check, "verify against the matching oracle");
  app.add_option("--fuse", fuse, "none | relu | bias_relu")
      ->check(CLI::IsMember({"none", "relu", "bias_relu"}));
  app.add_option("--seed", cfg.seed, "data generator seed");
  app.add_option("--vlen", cfg.vlen, "channel block width")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", out_json, "write a JSON report");
  app.add_option("--csv", out_csv, "write a CSV report");
  app.add_option("--dump-dir", cfg.dump_dir,
                 "dump CFT1 ref/result tensors on check failure");
  app.add_flag("--chain", chain_mode,
               "run the layer list as a fused forward chain");
  app.add_option("--min-acc", cfg.engine.min_accumulators,
                 "minimum register-tile accumulators");
  app.add_option("--max-acc", cfg.engine.max_accumulators,
                 "maximum register-tile accumulators");
  app.add_option("--cache-budget", cfg.engine.cache_budget_bytes,
                 "per-thread cache budget in bytes (weight update blocking)");
  app.add_option("--prefetch-distance", cfg.engine.prefetch_lookahead,
                 "kernel-calls of prefetch lookahead");
  app.add_flag("--no-prefetch",
               [&cfg](int64_t) { cfg.engine.prefetch_enabled = false; },
               "disable software prefetch hints");
  app.add_flag("--streaming-stores", cfg.engine.streaming_stores,
               "use non-temporal stores for kernel outputs");

  CLI11_PARSE(app, argc, argv);

  cfg.pass = pass == "F"   ? PassKind::Forward
             : pass == "B" ? PassKind::Backward
                           : PassKind::Update;
  cfg.dtype = dtype == "f32" ? DataKind::F32 : DataKind::I16;
  cfg.impl = impl == "naive"    ? ImplKind::Naive
             : impl == "im2col" ? ImplKind::Im2col
                                : ImplKind::Direct;
  if (fuse == "relu") cfg.fuse = FusedOpKind::RELU;
  if (fuse == "bias_relu") cfg.fuse = FusedOpKind::BIAS_RELU;

  try {
    if (chain_mode) return run_chain_mode(cfg);

    const BenchReport report = run_benchmark(cfg);
    print_report(report, std::cout);
    if (!out_json.empty()) {
      std::ofstream os(out_json);
      write_report_json(report, os);
    }
    if (!out_csv.empty()) {
      std::ofstream os(out_csv);
      write_report_csv(report, os);
    }
    if (cfg.check && !report.all_ok) {
      std::cerr << "check FAILED on at least one layer\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
