#include "dconv/propagation.hpp"

#include <algorithm>

namespace dconv {

namespace {

void check_forward_tensors(const ConvLayerSpec& spec,
                           const BlockedActivation& in,
                           const BlockedWeight& wt) {
  if (in.n != spec.N || in.c != spec.C || in.h != spec.H || in.w != spec.W ||
      in.vlen != spec.vlen)
    throw ShapeMismatch("forward: input does not match the layer spec");
  if (wt.k != spec.K || wt.c != spec.C || wt.r != spec.R || wt.s != spec.S ||
      wt.vlen != spec.vlen)
    throw ShapeMismatch("forward: weight does not match the layer spec");
}

ConvLayerSpec dual_spec_stride1(const ConvLayerSpec& spec) {
  const auto [P, Q] = derive_output_shape(spec);
  return make_layer_spec(spec.N, spec.K, spec.C, P, Q, spec.R, spec.S, 1,
                         spec.R - 1 - spec.pad_h, spec.S - 1 - spec.pad_w,
                         spec.vlen);
}

ConvLayerSpec dual_spec_1x1(const ConvLayerSpec& spec) {
  const auto [P, Q] = derive_output_shape(spec);
  return make_layer_spec(spec.N, spec.K, spec.C, P, Q, 1, 1, 1, 0, 0,
                         spec.vlen);
}

}  // namespace

BackwardRoute choose_backward_route(const ConvLayerSpec& spec) {
  if (spec.stride == 1 && spec.pad_h <= spec.R - 1 && spec.pad_w <= spec.S - 1)
    return BackwardRoute::DUALITY_STRIDE1;
  if (spec.R == 1 && spec.S == 1) return BackwardRoute::DUALITY_1x1;
  return BackwardRoute::GENERIC_GEMM;
}

ExecutionPlan make_forward_plan(const ConvLayerSpec& spec, int threads,
                                const std::optional<FusedOp>& fusion,
                                const EngineConfig& cfg, KernelDType dtype,
                                int out_halo_h, int out_halo_w) {
  const auto [P, Q] = derive_output_shape(spec);
  const TensorView in_view = input_view(spec, spec.pad_h, spec.pad_w);
  const TensorView out_view =
      activation_view(P, Q, spec.kb(), out_halo_h, out_halo_w);
  return dryrun_forward_views(spec, choose_loop_order(spec),
                              select_register_blocking(spec, cfg),
                              partition_threads(spec, threads, cfg), fusion,
                              in_view, out_view, cfg, dtype);
}

void forward_into(const ExecutionPlan& plan, const BlockedActivation& in,
                  const BlockedWeight& wt, BlockedActivation& out) {
  out.fill_zero();
  parallel_run(plan.geom.threads,
               [&](int tid) { replay(plan, in, wt, out, tid); });
}

BlockedActivation forward(const ConvLayerSpec& spec,
                          const BlockedActivation& in, const BlockedWeight& wt,
                          const ExecutionPlan& plan) {
  check_forward_tensors(spec, in, wt);
  if (plan.geom.out.pix_scale != 1)
    throw PlanTensorMismatch("forward: plan output is a scattered surface");
  const auto [P, Q] = derive_output_shape(spec);
  BlockedActivation out(spec.N, spec.K, P, Q, spec.vlen, plan.geom.out.row0,
                        plan.geom.out.col0);
  forward_into(plan, in, wt, out);
  return out;
}

void forward_into_i16(const ExecutionPlan& plan,
                      const BlockedActivationI16& in,
                      const BlockedWeightI16& wt, BlockedActivationI32& out) {
  out.fill_zero();
  parallel_run(plan.geom.threads,
               [&](int tid) { replay(plan, in, wt, out, tid); });
}

BlockedActivationI32 forward_i16(const ConvLayerSpec& spec,
                                 const BlockedActivationI16& in,
                                 const BlockedWeightI16& wt,
                                 const ExecutionPlan& plan) {
  const auto [P, Q] = derive_output_shape(spec);
  BlockedActivationI32 out(spec.N, spec.K, P, Q, spec.vlen,
                           plan.geom.out.row0, plan.geom.out.col0);
  out.scale = in.scale * wt.scale;
  forward_into_i16(plan, in, wt, out);
  return out;
}

void forward_direct_loopnest(const ExecutionPlan& plan,
                             const BlockedActivation& in,
                             const BlockedWeight& wt, BlockedActivation& out) {
  const PlanGeometry& g = plan.geom;
  const ConvLayerSpec& spec = g.spec;
  const auto [P, Q] = derive_output_shape(spec);
  const int rb_p = plan.blocking.primary.rb_p;
  const int rb_q = plan.blocking.primary.rb_q;
  const int64_t pb = ceil_div(P, rb_p);
  const int64_t qb = ceil_div(Q, rb_q);

  out.fill_zero();
  const float* ib = in.data.data();
  const float* wb = wt.data.data();
  float* ob = out.data.data();

  auto tile_offsets = [&](int n, int kb, int cb, int64_t tile, int64_t& ioff,
                          int64_t& woff, int64_t& ooff, int& variant,
                          int& er, int& ec) {
    const int ojb = static_cast<int>(tile / qb);
    const int oib = static_cast<int>(tile % qb);
    const int oj0 = ojb * rb_p, oi0 = oib * rb_q;
    er = std::min(rb_p, P - oj0);
    ec = std::min(rb_q, Q - oi0);
    variant = (er == rb_p && ec == rb_q) ? 0 : 1;
    ioff = (((static_cast<int64_t>(n) * g.in.blocks + cb) * g.in.rows_phys +
             g.in.row0 + spec.stride * oj0) *
                g.in.cols_phys +
            g.in.col0 + spec.stride * oi0) *
           spec.vlen;
    woff = (static_cast<int64_t>(kb) * spec.cb() + cb) * spec.R * spec.S *
           spec.vlen * spec.vlen;
    ooff = (((static_cast<int64_t>(n) * g.out.blocks + kb) * g.out.rows_phys +
             g.out.row0 + g.out.pix_scale * oj0) *
                g.out.cols_phys +
            g.out.col0 + g.out.pix_scale * oi0) *
           spec.vlen;
  };

  auto run_apply = [&](int n, int kb, int64_t tile) {
    int64_t ioff, woff, ooff;
    int variant, er, ec;
    tile_offsets(n, kb, 0, tile, ioff, woff, ooff, variant, er, ec);
    ApplyRecord rec;
    rec.op = static_cast<int32_t>(plan.fusion->kind);
    rec.out_offset = ooff;
    rec.rows = er;
    rec.cols = ec;
    rec.kb = kb;
    // same tile application the replay path performs
    const int vlen = spec.vlen;
    const int64_t row_stride =
        static_cast<int64_t>(g.out.cols_phys) * vlen * g.out.pix_scale;
    const int64_t pix_stride = static_cast<int64_t>(vlen) * g.out.pix_scale;
    const auto kind = plan.fusion->kind;
    float* base = ob + rec.out_offset;
    for (int pr = 0; pr < rec.rows; ++pr)
      for (int pc = 0; pc < rec.cols; ++pc) {
        float* px = base + pr * row_stride + pc * pix_stride;
        for (int v = 0; v < vlen; ++v) {
          float x = px[v];
          if (kind == FusedOpKind::BIAS_ADD || kind == FusedOpKind::BIAS_RELU)
            x += plan.bias_lanes[static_cast<size_t>(kb) * vlen + v];
          if (kind == FusedOpKind::RELU || kind == FusedOpKind::BIAS_RELU)
            x = x > 0.0f ? x : 0.0f;
          px[v] = x;
        }
      }
  };

  auto run_conv = [&](int n, int kb, int cb, int64_t tile) {
    int64_t ioff, woff, ooff;
    int variant, er, ec;
    tile_offsets(n, kb, cb, tile, ioff, woff, ooff, variant, er, ec);
    const CompiledKernel& k = plan.kernels[variant];
    k.run(ib + ioff, wb + woff, ob + ooff, ib + ioff, wb + woff, ob + ooff);
  };

  const int cb_count = spec.cb();
  const int64_t group_tiles = pb * qb;
  for (int n = 0; n < spec.N; ++n)
    for (int kb = 0; kb < spec.kb(); ++kb) {
      if (!g.order.pull_in_cb) {
        for (int cb = 0; cb < cb_count; ++cb)
          for (int64_t t = 0; t < group_tiles; ++t) {
            run_conv(n, kb, cb, t);
            if (plan.fusion && cb == cb_count - 1) run_apply(n, kb, t);
          }
      } else {
        for (int64_t t = 0; t < group_tiles; ++t) {
          for (int cb = 0; cb < cb_count; ++cb) run_conv(n, kb, cb, t);
          if (plan.fusion) run_apply(n, kb, t);
        }
      }
    }
}

void apply_fused_op(BlockedActivation& act, const FusedOp& op) {
  const int vlen = act.vlen;
  std::vector<float> bias_lanes(static_cast<size_t>(act.cb()) * vlen, 0.0f);
  if (op.kind != FusedOpKind::RELU) {
    if (static_cast<int>(op.bias.size()) != act.c)
      throw ShapeMismatch("apply_fused_op: bias length must equal channels");
    for (int k = 0; k < act.c; ++k) bias_lanes[k] = op.bias[k];
  }
  for (int n = 0; n < act.n; ++n)
    for (int b = 0; b < act.cb(); ++b)
      for (int y = 0; y < act.h; ++y)
        for (int x = 0; x < act.w; ++x) {
          float* px = act.at(n, b, y + act.halo_h, x + act.halo_w);
          for (int v = 0; v < vlen; ++v) {
            float val = px[v];
            if (op.kind != FusedOpKind::RELU)
              val += bias_lanes[static_cast<size_t>(b) * vlen + v];
            if (op.kind != FusedOpKind::BIAS_ADD)
              val = val > 0.0f ? val : 0.0f;
            px[v] = val;
          }
        }
}

BackwardContext prepare_backward(const ConvLayerSpec& spec,
                                 const BlockedWeight& wt, int threads,
                                 const EngineConfig& cfg) {
  spec.validate();
  if (wt.k != spec.K || wt.c != spec.C || wt.r != spec.R || wt.s != spec.S ||
      wt.vlen != spec.vlen)
    throw ShapeMismatch("backward: weight does not match the layer spec");

  BackwardContext ctx;
  ctx.route = choose_backward_route(spec);
  ctx.spec = spec;
  ctx.threads = threads;
  ctx.wt = transform_weight_stride1(wt);

  const auto [P, Q] = derive_output_shape(spec);
  switch (ctx.route) {
    case BackwardRoute::DUALITY_STRIDE1: {
      ctx.dual = dual_spec_stride1(spec);
      ctx.plan = make_forward_plan(ctx.dual, threads, std::nullopt, cfg);
      break;
    }
    case BackwardRoute::DUALITY_1x1: {
      ctx.dual = dual_spec_1x1(spec);
      const TensorView in_view = input_view(ctx.dual, 0, 0);
      TensorView out_view;
      out_view.rows_phys = spec.H + 2 * spec.pad_h;
      out_view.cols_phys = spec.W + 2 * spec.pad_w;
      out_view.blocks = spec.cb();
      out_view.row0 = 0;  // lattice point (0,0) lands at stride*0 - pad + halo
      out_view.col0 = 0;
      out_view.pix_scale = spec.stride;
      ctx.plan = dryrun_forward_views(
          ctx.dual, choose_loop_order(ctx.dual),
          select_register_blocking(ctx.dual, cfg),
          partition_threads(ctx.dual, threads, cfg), std::nullopt, in_view,
          out_view, cfg);
      break;
    }
    case BackwardRoute::GENERIC_GEMM: {
      ctx.dual = spec;
      MicrokernelDescriptor d;
      d.pass = Pass::FWD;
      d.vlen = spec.vlen;
      d.rb_p = 1;
      d.rb_q = Q;
      d.r = 1;
      d.s = 1;
      d.stride = 1;  // dO pixels are read contiguously
      d.prefetch_enabled = cfg.prefetch_enabled;
      d.streaming_stores = false;
      d.geom.in_row_stride = static_cast<int64_t>(Q) * spec.vlen;
      d.geom.out_row_stride =
          static_cast<int64_t>(spec.W + 2 * spec.pad_w) * spec.vlen;
      d.geom.out_pix_stride = static_cast<int64_t>(spec.stride) * spec.vlen;
      ctx.row_kernel = build_forward_kernel(d);
      break;
    }
  }
  return ctx;
}

BlockedActivation backward_with(const BackwardContext& ctx,
                                const BlockedActivation& grad_out) {
  const ConvLayerSpec& spec = ctx.spec;
  const auto [P, Q] = derive_output_shape(spec);
  if (grad_out.n != spec.N || grad_out.c != spec.K || grad_out.h != P ||
      grad_out.w != Q || grad_out.vlen != spec.vlen)
    throw ShapeMismatch("backward: grad_out does not match the layer spec");

  switch (ctx.route) {
    case BackwardRoute::DUALITY_STRIDE1: {
      const BlockedActivation* src = &grad_out;
      BlockedActivation rehalo;
      if (grad_out.halo_h != ctx.dual.pad_h ||
          grad_out.halo_w != ctx.dual.pad_w) {
        rehalo = copy_with_halo(grad_out, ctx.dual.pad_h, ctx.dual.pad_w);
        src = &rehalo;
      }
      BlockedActivation grad_in(spec.N, spec.C, spec.H, spec.W, spec.vlen);
      forward_into(*ctx.plan, *src, ctx.wt, grad_in);
      return grad_in;
    }
    case BackwardRoute::DUALITY_1x1: {
      const BlockedActivation* src = &grad_out;
      BlockedActivation rehalo;
      if (grad_out.halo_h != 0 || grad_out.halo_w != 0) {
        rehalo = copy_with_halo(grad_out, 0, 0);
        src = &rehalo;
      }
      BlockedActivation grad_in(spec.N, spec.C, spec.H, spec.W, spec.vlen,
                                spec.pad_h, spec.pad_w);
      grad_in.fill_zero();
      parallel_run(ctx.plan->geom.threads, [&](int tid) {
        replay(*ctx.plan, *src, ctx.wt, grad_in, tid);
      });
      grad_in.zero_halo();
      return grad_in;
    }
    case BackwardRoute::GENERIC_GEMM:
    default: {
      const BlockedActivation* src = &grad_out;
      BlockedActivation rehalo;
      if (grad_out.halo_h != 0 || grad_out.halo_w != 0) {
        rehalo = copy_with_halo(grad_out, 0, 0);
        src = &rehalo;
      }
      BlockedActivation grad_in(spec.N, spec.C, spec.H, spec.W, spec.vlen,
                                spec.pad_h, spec.pad_w);
      grad_in.fill_zero();
      const int64_t work = static_cast<int64_t>(spec.N) * spec.cb();
      parallel_run(ctx.threads, [&](int tid) {
        const Range range = split_range(work, ctx.threads, tid);
        for (int64_t item = range.begin; item < range.end; ++item) {
          const int n = static_cast<int>(item / spec.cb());
          const int cb = static_cast<int>(item % spec.cb());
          for (int kb = 0; kb < spec.kb(); ++kb)
            for (int oj = 0; oj < P; ++oj)
              for (int r = 0; r < spec.R; ++r)
                for (int s = 0; s < spec.S; ++s) {
                  const float* go = src->at(n, kb, oj, 0);
                  const float* w =
                      ctx.wt.at(cb, kb, spec.R - 1 - r, spec.S - 1 - s);
                  float* gi = grad_in.at(n, cb, spec.stride * oj + r, s);
                  ctx.row_kernel.run(go, w, gi, go, w, gi);
                }
        }
      });
      grad_in.zero_halo();
      return grad_in;
    }
  }
}

BlockedActivation backward(const ConvLayerSpec& spec,
                           const BlockedActivation& grad_out,
                           const BlockedWeight& wt, int threads,
                           const EngineConfig& cfg) {
  return backward_with(prepare_backward(spec, wt, threads, cfg), grad_out);
}

BlockedWeight reduce_weight_copies(const WeightGradCopies& copies,
                                   int threads) {
  if (copies.copies.empty())
    throw InfeasibleStrategy("reduce_weight_copies: no copies");
  const int g_count = static_cast<int>(copies.copies.size());
  if (g_count == 1) return copies.copies[0];
  const BlockedWeight& first = copies.copies[0];
  BlockedWeight out(first.k, first.c, first.r, first.s, first.vlen);
  const int64_t total = static_cast<int64_t>(out.data.size());
  parallel_run(threads, [&](int tid) {
    const Range range = split_range(total, threads, tid);
    for (int64_t e = range.begin; e < range.end; ++e) {
      float sum = copies.copies[0].data[e];
      for (int g = 1; g < g_count; ++g) sum += copies.copies[g].data[e];
      out.data[e] = sum;
    }
  });
  return out;
}

BlockedWeight weight_update(const ConvLayerSpec& spec,
                            const BlockedActivation& in,
                            const BlockedActivation& grad_out,
                            const WeightUpdateStrategy& strategy, int b_p,
                            int b_q, const EngineConfig& cfg) {
  spec.validate();
  const auto [P, Q] = derive_output_shape(spec);
  if (in.n != spec.N || in.c != spec.C || in.h != spec.H || in.w != spec.W ||
      in.vlen != spec.vlen)
    throw ShapeMismatch("weight_update: input does not match the layer spec");
  if (in.halo_h < spec.pad_h || in.halo_w < spec.pad_w)
    throw ShapeMismatch("weight_update: input halo smaller than the padding");
  if (grad_out.n != spec.N || grad_out.c != spec.K || grad_out.h != P ||
      grad_out.w != Q || grad_out.vlen != spec.vlen)
    throw ShapeMismatch("weight_update: grad_out does not match the layer spec");
  if (b_p < 1 || b_q < 1 || P % b_p != 0 || Q % b_q != 0)
    throw InfeasibleStrategy("weight_update: blocking must divide (P, Q)");
  const int t_count = strategy.threads;
  const int g_count = strategy.copies;
  if (t_count < 1 || g_count < 1 || t_count % g_count != 0)
    throw InfeasibleStrategy("weight_update: copies must divide threads");

  MicrokernelDescriptor d;
  d.pass = Pass::UPD;
  d.vlen = spec.vlen;
  d.b_p = b_p;
  d.b_q = b_q;
  d.r = spec.R;
  d.s = spec.S;
  d.stride = spec.stride;
  d.prefetch_enabled = cfg.prefetch_enabled;
  d.geom.in_row_stride = in.row_stride();
  d.geom.out_row_stride = grad_out.row_stride();
  d.geom.out_pix_stride = spec.vlen;
  const CompiledKernel kernel = build_update_kernel(d);

  WeightGradCopies copies;
  copies.copies.reserve(g_count);
  for (int g = 0; g < g_count; ++g)
    copies.copies.emplace_back(spec.K, spec.C, spec.R, spec.S, spec.vlen);
  const int group_threads = t_count / g_count;
  copies.owner.resize(t_count);
  for (int t = 0; t < t_count; ++t) copies.owner[t] = t / group_threads;

  const int64_t tasks =
      static_cast<int64_t>(spec.R) * spec.S * spec.kb() * spec.cb();
  const int pb_tiles = P / b_p, qb_tiles = Q / b_q;
  const int row0 = in.halo_h - spec.pad_h;
  const int col0 = in.halo_w - spec.pad_w;

  parallel_run(t_count, [&](int tid) {
    const int g = copies.owner[tid];
    const int rank = tid % group_threads;
    const Range n_range = split_range(spec.N, g_count, g);
    const Range task_range = split_range(tasks, group_threads, rank);
    BlockedWeight& dst = copies.copies[g];
    for (int64_t task = task_range.begin; task < task_range.end; ++task) {
      int64_t rest = task;
      const int cb = static_cast<int>(rest % spec.cb());
      rest /= spec.cb();
      const int kb = static_cast<int>(rest % spec.kb());
      rest /= spec.kb();
      const int s = static_cast<int>(rest % spec.S);
      const int r = static_cast<int>(rest / spec.S);
      float* dw_block = dst.at(kb, cb, r, s);
      for (int64_t n = n_range.begin; n < n_range.end; ++n)
        for (int ojb = 0; ojb < pb_tiles; ++ojb)
          for (int oib = 0; oib < qb_tiles; ++oib) {
            const int oj0 = ojb * b_p, oi0 = oib * b_q;
            const float* ip =
                in.at(static_cast<int>(n), cb, row0 + spec.stride * oj0 + r,
                      col0 + spec.stride * oi0 + s);
            const float* gp =
                grad_out.at(static_cast<int>(n), kb, grad_out.halo_h + oj0,
                            grad_out.halo_w + oi0);
            kernel.run(ip, gp, dw_block, ip, gp, dw_block);
          }
    }
  });

  return reduce_weight_copies(copies, t_count);
}

}  // namespace dconv
