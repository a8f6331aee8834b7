#include "dconv/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "dconv/tensor_io.hpp"

namespace dconv {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct CheckBounds {
  double linf_rel = 0.0;
  double l2_rel = std::numeric_limits<double>::infinity();
  bool exact = false;
};

CheckBounds check_bounds(const BenchConfig& cfg) {
  if (cfg.dtype == DataKind::I16) return {0.0, 0.0, true};
  switch (cfg.impl) {
    case ImplKind::Naive:
      return {0.0, 0.0, true};  // compared against itself
    case ImplKind::Im2col:
      return {1e-5, std::numeric_limits<double>::infinity(), false};
    case ImplKind::Direct:
      if (cfg.pass == PassKind::Update)
        return {1e-4, std::numeric_limits<double>::infinity(), false};
      return {1e-4, 1e-5, false};
  }
  return {};
}

template <typename T>
void dump_pair(const BenchConfig& cfg, int id, const Tensor4<T>& ref,
               const Tensor4<T>& got) {
  if (cfg.dump_dir.empty()) return;
  const std::string stem = cfg.dump_dir + "/layer" + std::to_string(id) + "_" +
                           to_string(cfg.pass);
  write_cft_file(stem + "_ref.cft", ref);
  write_cft_file(stem + "_got.cft", got);
}

template <typename RunFn>
void time_runs(LayerReport& report, int iterations, RunFn&& run) {
  run();  // warm-up; also materializes the checked result
  double best = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const auto t0 = Clock::now();
    run();
    const double ms = ms_since(t0);
    best = std::min(best, ms);
    sum += ms;
  }
  report.samples = iterations;
  report.best_ms = best;
  report.avg_ms = sum / iterations;
  report.gflops =
      static_cast<double>(report.flops) / (best * 1e-3) / 1e9;
}

template <typename T>
void finish_check(const BenchConfig& cfg, LayerReport& report,
                  const Tensor4<T>& ref, const Tensor4<T>& got) {
  if (!cfg.check) return;
  report.checked = true;
  report.norms = error_norms(ref, got);
  const CheckBounds bounds = check_bounds(cfg);
  report.check_ok = bounds.exact
                        ? report.norms.linf_abs == 0.0
                        : report.norms.within(bounds.linf_rel, bounds.l2_rel);
  if (!report.check_ok) dump_pair(cfg, report.id, ref, got);
}

void apply_op_canonical(TensorF& out, FusedOpKind kind,
                        const std::vector<float>& bias) {
  for (int64_t n = 0; n < out.dim(0); ++n)
    for (int64_t k = 0; k < out.dim(1); ++k)
      for (int64_t y = 0; y < out.dim(2); ++y)
        for (int64_t x = 0; x < out.dim(3); ++x) {
          float v = out(n, k, y, x);
          if (kind != FusedOpKind::RELU) v += bias[k];
          if (kind != FusedOpKind::BIAS_ADD) v = v > 0.0f ? v : 0.0f;
          out(n, k, y, x) = v;
        }
}

LayerReport bench_layer(const BenchConfig& cfg, const LayerEntry& entry) {
  const ConvLayerSpec& spec = entry.spec;
  const auto [P, Q] = derive_output_shape(spec);
  LayerReport report;
  report.id = entry.id;
  report.spec = spec;
  report.flops = pass_flops(spec);

  Rng rng(cfg.seed ^ (static_cast<uint64_t>(entry.id) << 32));

  if (cfg.fuse && (cfg.pass != PassKind::Forward ||
                   cfg.impl != ImplKind::Direct ||
                   cfg.dtype != DataKind::F32))
    throw Error("--fuse requires the direct f32 forward pass");

  if (cfg.dtype == DataKind::I16) {
    if (cfg.pass != PassKind::Forward)
      throw Error("i16 supports the forward pass only");
    if (cfg.impl == ImplKind::Im2col)
      throw Error("the im2col baseline is f32 only");
    const TensorI16 input = random_i16(rng, spec.N, spec.C, spec.H, spec.W);
    const TensorI16 weight = random_i16(rng, spec.K, spec.C, spec.R, spec.S);
    if (cfg.impl == ImplKind::Naive) {
      TensorI64 result;
      time_runs(report, cfg.iterations,
                [&] { result = int_conv_forward_oracle(spec, input, weight); });
      finish_check(cfg, report, result, result);
      return report;
    }
    const auto ib = to_blocked_activation(input, spec);
    const auto wb = to_blocked_weight(weight, spec);
    const ExecutionPlan plan = make_forward_plan(
        spec, cfg.threads, std::nullopt, cfg.engine, KernelDType::I16);
    report.blocking = plan.blocking;
    BlockedActivationI32 out(spec.N, spec.K, P, Q, spec.vlen);
    time_runs(report, cfg.iterations,
              [&] { forward_into_i16(plan, ib, wb, out); });
    if (cfg.check) {
      const TensorI64 ref = int_conv_forward_oracle(spec, input, weight);
      const TensorI64 got = from_blocked_activation(out).cast<int64_t>();
      finish_check(cfg, report, ref, got);
    }
    return report;
  }

  switch (cfg.pass) {
    case PassKind::Forward: {
      const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
      const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
      std::vector<float> bias;
      if (cfg.fuse && *cfg.fuse != FusedOpKind::RELU) {
        bias.resize(spec.K);
        for (float& b : bias) b = rng.next_f32();
      }
      if (cfg.impl == ImplKind::Naive) {
        TensorF result;
        time_runs(report, cfg.iterations,
                  [&] { result = conv_forward_naive(spec, input, weight); });
        finish_check(cfg, report, result, result);
        return report;
      }
      if (cfg.impl == ImplKind::Im2col) {
        TensorF result;
        time_runs(report, cfg.iterations,
                  [&] { result = conv_forward_im2col(spec, input, weight); });
        if (cfg.check) {
          const TensorF ref = conv_forward_naive(spec, input, weight);
          finish_check(cfg, report, ref, result);
        }
        return report;
      }
      const BlockedActivation ib = to_blocked_activation(input, spec);
      const BlockedWeight wb = to_blocked_weight(weight, spec);
      std::optional<FusedOp> fop;
      if (cfg.fuse) {
        FusedOp op;
        op.kind = *cfg.fuse;
        op.bias = bias;
        fop = op;
      }
      const ExecutionPlan plan =
          make_forward_plan(spec, cfg.threads, fop, cfg.engine);
      report.blocking = plan.blocking;
      BlockedActivation out(spec.N, spec.K, P, Q, spec.vlen);
      time_runs(report, cfg.iterations,
                [&] { forward_into(plan, ib, wb, out); });
      if (cfg.check) {
        TensorF ref = conv_forward_naive(spec, input, weight);
        if (cfg.fuse) apply_op_canonical(ref, *cfg.fuse, bias);
        finish_check(cfg, report, ref, from_blocked_activation(out));
      }
      return report;
    }

    case PassKind::Backward: {
      if (cfg.impl == ImplKind::Im2col)
        throw Error("the im2col baseline implements the forward pass only");
      const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
      const TensorF weight = random_f32(rng, spec.K, spec.C, spec.R, spec.S);
      if (cfg.impl == ImplKind::Naive) {
        TensorF result;
        time_runs(report, cfg.iterations, [&] {
          result = conv_backward_naive(spec, grad_out, weight);
        });
        finish_check(cfg, report, result, result);
        return report;
      }
      const BlockedWeight wb = to_blocked_weight(weight, spec);
      const BackwardContext ctx =
          prepare_backward(spec, wb, cfg.threads, cfg.engine);
      report.route = ctx.route;
      if (ctx.plan) report.blocking = ctx.plan->blocking;
      const int halo_h = ctx.route == BackwardRoute::DUALITY_STRIDE1
                             ? ctx.dual.pad_h
                             : 0;
      const int halo_w = ctx.route == BackwardRoute::DUALITY_STRIDE1
                             ? ctx.dual.pad_w
                             : 0;
      const BlockedActivation gb =
          to_blocked_activation(grad_out, spec.vlen, halo_h, halo_w);
      BlockedActivation grad_in;
      time_runs(report, cfg.iterations,
                [&] { grad_in = backward_with(ctx, gb); });
      if (cfg.check) {
        const TensorF ref = conv_backward_naive(spec, grad_out, weight);
        finish_check(cfg, report, ref, from_blocked_activation(grad_in));
      }
      return report;
    }

    case PassKind::Update:
    default: {
      if (cfg.impl == ImplKind::Im2col)
        throw Error("the im2col baseline implements the forward pass only");
      const TensorF input = random_f32(rng, spec.N, spec.C, spec.H, spec.W);
      const TensorF grad_out = random_f32(rng, spec.N, spec.K, P, Q);
      if (cfg.impl == ImplKind::Naive) {
        TensorF result;
        time_runs(report, cfg.iterations, [&] {
          result = conv_update_naive(spec, input, grad_out);
        });
        finish_check(cfg, report, result, result);
        return report;
      }
      const BlockedActivation ib = to_blocked_activation(input, spec);
      const BlockedActivation gb =
          to_blocked_activation(grad_out, spec.vlen, 0, 0);
      const WeightUpdateStrategy strategy =
          choose_update_strategy(spec, cfg.threads, cfg.engine);
      const auto [bp, bq] = choose_spatial_blocking(spec, cfg.engine);
      report.strategy = strategy.mode;
      report.copies = strategy.copies;
      report.b_p = bp;
      report.b_q = bq;
      BlockedWeight grad_w;
      time_runs(report, cfg.iterations, [&] {
        grad_w = weight_update(spec, ib, gb, strategy, bp, bq, cfg.engine);
      });
      if (cfg.check) {
        const TensorF ref = conv_update_naive(spec, input, grad_out);
        finish_check(cfg, report, ref, from_blocked_weight(grad_w));
      }
      return report;
    }
  }
}

}  // namespace

int64_t pass_flops(const ConvLayerSpec& spec) {
  const auto [P, Q] = derive_output_shape(spec);
  return 2ll * spec.N * spec.K * spec.C * P * Q * spec.R * spec.S;
}

TensorF random_f32(Rng& rng, int64_t d0, int64_t d1, int64_t d2, int64_t d3) {
  TensorF t(d0, d1, d2, d3);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_f32();
  return t;
}

TensorI16 random_i16(Rng& rng, int64_t d0, int64_t d1, int64_t d2,
                     int64_t d3) {
  TensorI16 t(d0, d1, d2, d3);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_i16(-256, 255);
  return t;
}

BenchReport run_benchmark(const BenchConfig& cfg) {
  if (cfg.iterations < 1) throw Error("iterations must be >= 1");
  if (cfg.minibatch < 1) throw Error("minibatch must be >= 1");
  if (cfg.threads < 1) throw Error("threads must be >= 1");

  BenchReport report;
  report.layers_source = cfg.layers;
  report.minibatch = cfg.minibatch;
  report.iterations = cfg.iterations;
  report.pass = cfg.pass;
  report.dtype = cfg.dtype;
  report.impl = cfg.impl;
  report.threads = cfg.threads;
  report.seed = cfg.seed;

  const auto layers = load_layers(cfg.layers, cfg.minibatch, cfg.vlen);
  for (const LayerEntry& entry : layers) {
    LayerReport lr = bench_layer(cfg, entry);
    report.all_ok = report.all_ok && lr.check_ok;
    report.per_layer.push_back(std::move(lr));
  }
  return report;
}

BlockedActivation run_chain(const std::vector<ChainLayer>& layers,
                            const TensorF& input,
                            const std::vector<TensorF>& weights, int threads,
                            const EngineConfig& cfg) {
  if (layers.empty()) throw ChainShapeMismatch("empty chain");
  if (weights.size() != layers.size())
    throw ChainShapeMismatch("one weight tensor per chain layer required");

  const int minibatch = static_cast<int>(input.dim(0));
  std::vector<ConvLayerSpec> specs;
  specs.reserve(layers.size());
  for (const ChainLayer& layer : layers) {
    ConvLayerSpec s = layer.spec;
    s.N = minibatch;
    s.validate();
    specs.push_back(s);
  }
  if (input.dim(1) != specs[0].C || input.dim(2) != specs[0].H ||
      input.dim(3) != specs[0].W)
    throw ChainShapeMismatch("input tensor does not match the first layer");
  for (size_t i = 0; i + 1 < specs.size(); ++i) {
    const auto [p, q] = derive_output_shape(specs[i]);
    if (specs[i].K != specs[i + 1].C)
      throw ChainShapeMismatch(
          "layer " + std::to_string(i) + " produces " +
          std::to_string(specs[i].K) + " maps, layer " + std::to_string(i + 1) +
          " expects " + std::to_string(specs[i + 1].C));
    if (p != specs[i + 1].H || q != specs[i + 1].W)
      throw ChainShapeMismatch("spatial shapes do not chain at layer " +
                               std::to_string(i + 1));
  }

  BlockedActivation x = to_blocked_activation(input, specs[0]);
  for (size_t i = 0; i < specs.size(); ++i) {
    const ConvLayerSpec& spec = specs[i];
    const auto [P, Q] = derive_output_shape(spec);
    const BlockedWeight wb = to_blocked_weight(weights[i], spec);
    const int next_hh = i + 1 < specs.size() ? specs[i + 1].pad_h : 0;
    const int next_hw = i + 1 < specs.size() ? specs[i + 1].pad_w : 0;
    const ExecutionPlan plan =
        make_forward_plan(spec, threads, layers[i].fuse, cfg, KernelDType::F32,
                          next_hh, next_hw);
    BlockedActivation out(spec.N, spec.K, P, Q, spec.vlen, next_hh, next_hw);
    forward_into(plan, x, wb, out);
    x = std::move(out);
  }
  return x;
}

const char* to_string(PassKind p) {
  switch (p) {
    case PassKind::Forward: return "F";
    case PassKind::Backward: return "B";
    case PassKind::Update: return "U";
  }
  return "?";
}

const char* to_string(ImplKind i) {
  switch (i) {
    case ImplKind::Naive: return "naive";
    case ImplKind::Im2col: return "im2col";
    case ImplKind::Direct: return "direct";
  }
  return "?";
}

const char* to_string(DataKind d) {
  return d == DataKind::F32 ? "f32" : "i16";
}

const char* to_string(UpdateMode m) {
  switch (m) {
    case UpdateMode::TASK_PARALLEL: return "task_parallel";
    case UpdateMode::COPY_REDUCE: return "copy_reduce";
    case UpdateMode::HYBRID: return "hybrid";
  }
  return "?";
}

const char* to_string(BackwardRoute r) {
  switch (r) {
    case BackwardRoute::DUALITY_STRIDE1: return "duality_stride1";
    case BackwardRoute::DUALITY_1x1: return "duality_1x1";
    case BackwardRoute::GENERIC_GEMM: return "generic_gemm";
  }
  return "?";
}

void print_report(const BenchReport& report, std::ostream& os) {
  os << "# pass=" << to_string(report.pass) << " impl="
     << to_string(report.impl) << " dtype=" << to_string(report.dtype)
     << " N=" << report.minibatch << " threads=" << report.threads
     << " iters=" << report.iterations << " seed=" << report.seed << "\n";
  os << std::setw(4) << "id" << std::setw(6) << "C" << std::setw(6) << "K"
     << std::setw(5) << "H" << std::setw(5) << "W" << std::setw(3) << "R"
     << std::setw(3) << "S" << std::setw(4) << "str" << std::setw(13)
     << "MFLOP" << std::setw(11) << "best ms" << std::setw(11) << "avg ms"
     << std::setw(9) << "GFLOPS";
  os << std::setw(8) << "check" << std::setw(12) << "linf_rel" << "\n";
  for (const LayerReport& lr : report.per_layer) {
    os << std::setw(4) << lr.id << std::setw(6) << lr.spec.C << std::setw(6)
       << lr.spec.K << std::setw(5) << lr.spec.H << std::setw(5) << lr.spec.W
       << std::setw(3) << lr.spec.R << std::setw(3) << lr.spec.S
       << std::setw(4) << lr.spec.stride;
    os << std::setw(13) << std::fixed << std::setprecision(1)
       << static_cast<double>(lr.flops) / 1e6;
    os << std::setw(11) << std::setprecision(3) << lr.best_ms << std::setw(11)
       << lr.avg_ms << std::setw(9) << std::setprecision(2) << lr.gflops;
    if (lr.checked)
      os << std::setw(8) << (lr.check_ok ? "ok" : "FAIL") << std::setw(12)
         << std::scientific << std::setprecision(2) << lr.norms.linf_rel
         << std::fixed;
    else
      os << std::setw(8) << "-" << std::setw(12) << "-";
    os << "\n";
  }
  os.unsetf(std::ios_base::floatfield);
}

void write_report_json(const BenchReport& report, std::ostream& os) {
  nlohmann::json j;
  j["layers"] = report.layers_source;
  j["minibatch"] = report.minibatch;
  j["iterations"] = report.iterations;
  j["pass"] = to_string(report.pass);
  j["impl"] = to_string(report.impl);
  j["dtype"] = to_string(report.dtype);
  j["threads"] = report.threads;
  j["seed"] = report.seed;
  j["all_ok"] = report.all_ok;
  j["results"] = nlohmann::json::array();
  for (const LayerReport& lr : report.per_layer) {
    nlohmann::json r;
    r["id"] = lr.id;
    r["C"] = lr.spec.C;
    r["K"] = lr.spec.K;
    r["H"] = lr.spec.H;
    r["W"] = lr.spec.W;
    r["R"] = lr.spec.R;
    r["S"] = lr.spec.S;
    r["stride"] = lr.spec.stride;
    r["pad_h"] = lr.spec.pad_h;
    r["pad_w"] = lr.spec.pad_w;
    r["flops"] = lr.flops;
    r["best_ms"] = lr.best_ms;
    r["avg_ms"] = lr.avg_ms;
    r["gflops"] = lr.gflops;
    r["samples"] = lr.samples;
    if (lr.checked) {
      r["check_ok"] = lr.check_ok;
      r["linf_abs"] = lr.norms.linf_abs;
      r["l2_abs"] = lr.norms.l2_abs;
      r["linf_rel"] = lr.norms.linf_rel;
      r["l2_rel"] = lr.norms.l2_rel;
    }
    nlohmann::json blk;
    blk["rb_p"] = lr.blocking.primary.rb_p;
    blk["rb_q"] = lr.blocking.primary.rb_q;
    if (lr.blocking.remainder) {
      blk["rb2_p"] = lr.blocking.remainder->rb_p;
      blk["rb2_q"] = lr.blocking.remainder->rb_q;
    }
    r["blocking"] = blk;
    if (lr.b_p > 0) {
      r["b_p"] = lr.b_p;
      r["b_q"] = lr.b_q;
    }
    if (lr.strategy) {
      r["strategy"] = to_string(*lr.strategy);
      r["copies"] = lr.copies;
    }
    if (lr.route) r["route"] = to_string(*lr.route);
    j["results"].push_back(r);
  }
  os << j.dump(2) << "\n";
}

void write_report_csv(const BenchReport& report, std::ostream& os) {
  os << "id,C,K,H,W,R,S,stride,pad_h,pad_w,flops,best_ms,avg_ms,gflops,"
        "check_ok,linf_abs,l2_abs,linf_rel,l2_rel\n";
  for (const LayerReport& lr : report.per_layer) {
    os << lr.id << ',' << lr.spec.C << ',' << lr.spec.K << ',' << lr.spec.H
       << ',' << lr.spec.W << ',' << lr.spec.R << ',' << lr.spec.S << ','
       << lr.spec.stride << ',' << lr.spec.pad_h << ',' << lr.spec.pad_w << ','
       << lr.flops << ',' << lr.best_ms << ',' << lr.avg_ms << ','
       << lr.gflops << ',';
    if (lr.checked)
      os << (lr.check_ok ? 1 : 0) << ',' << lr.norms.linf_abs << ','
         << lr.norms.l2_abs << ',' << lr.norms.linf_rel << ','
         << lr.norms.l2_rel;
    else
      os << ",,,,";
    os << "\n";
  }
}

}  // namespace dconv
