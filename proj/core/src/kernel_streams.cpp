#include "dconv/kernel_streams.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <ostream>

namespace dconv {

namespace {

struct TileCursor {
  int n, kb, ojb, oib;
  int oj0, oi0;  // first output pixel of the tile
  int er, ec;    // tile extents
  int variant;
};

struct DryrunState {
  const ConvLayerSpec* spec;
  const TensorView* in;
  const TensorView* out;
  int P, Q, pb, qb;
  RegisterBlocking blocking;
  bool fused;
  FusedOpKind op = FusedOpKind::RELU;
};

TileCursor make_tile(const DryrunState& st, int n, int kb, int64_t tile) {
  TileCursor t;
  t.n = n;
  t.kb = kb;
  t.ojb = static_cast<int>(tile / st.qb);
  t.oib = static_cast<int>(tile % st.qb);
  t.oj0 = t.ojb * st.blocking.primary.rb_p;
  t.oi0 = t.oib * st.blocking.primary.rb_q;
  t.er = std::min(st.blocking.primary.rb_p, st.P - t.oj0);
  t.ec = std::min(st.blocking.primary.rb_q, st.Q - t.oi0);
  t.variant =
      (t.er == st.blocking.primary.rb_p && t.ec == st.blocking.primary.rb_q)
          ? 0
          : 1;
  return t;
}

int64_t act_offset(const TensorView& v, int vlen, int n, int blk, int prow,
                   int pcol) {
  return (((static_cast<int64_t>(n) * v.blocks + blk) * v.rows_phys + prow) *
              v.cols_phys +
          pcol) *
         vlen;
}

void emit_conv(const DryrunState& st, StreamBuffers& sb,
               std::vector<CallKind>& trace, const TileCursor& t, int cb) {
  const ConvLayerSpec& spec = *st.spec;
  sb.var.push_back(t.variant);
  sb.inp.push_back(act_offset(*st.in, spec.vlen, t.n, cb,
                              st.in->row0 + spec.stride * t.oj0,
                              st.in->col0 + spec.stride * t.oi0));
  sb.wt.push_back((static_cast<int64_t>(t.kb) * spec.cb() + cb) * spec.R *
                  spec.S * spec.vlen * spec.vlen);
  sb.out.push_back(act_offset(*st.out, spec.vlen, t.n, t.kb,
                              st.out->row0 + st.out->pix_scale * t.oj0,
                              st.out->col0 + st.out->pix_scale * t.oi0));
  trace.push_back(CallKind::CONV);
}

void emit_apply(const DryrunState& st, StreamBuffers& sb,
                std::vector<CallKind>& trace, const TileCursor& t) {
  ApplyRecord rec;
  rec.op = static_cast<int32_t>(st.op);
  rec.out_offset = act_offset(*st.out, st.spec->vlen, t.n, t.kb,
                              st.out->row0 + st.out->pix_scale * t.oj0,
                              st.out->col0 + st.out->pix_scale * t.oi0);
  rec.rows = t.er;
  rec.cols = t.ec;
  rec.kb = t.kb;
  sb.apply.push_back(rec);
  trace.push_back(CallKind::APPLY);
}

void fill_prefetch_streams(StreamBuffers& sb, int lookahead) {
  const size_t len = sb.inp.size();
  sb.pf_inp.resize(len);
  sb.pf_wt.resize(len);
  sb.pf_out.resize(len);
  for (size_t i = 0; i < len; ++i) {
    const size_t j = i + lookahead < len ? i + lookahead : i;
    sb.pf_inp[i] = sb.inp[j];
    sb.pf_wt[i] = sb.wt[j];
    sb.pf_out[i] = sb.out[j];
  }
}

template <typename TOut>
void apply_record_to(const ExecutionPlan& plan, BlockedActivationT<TOut>& out,
                     const ApplyRecord& rec) {
  const int vlen = plan.geom.spec.vlen;
  const int64_t row_stride = static_cast<int64_t>(plan.geom.out.cols_phys) *
                             vlen * plan.geom.out.pix_scale;
  const int64_t pix_stride =
      static_cast<int64_t>(vlen) * plan.geom.out.pix_scale;
  const auto kind = static_cast<FusedOpKind>(rec.op);
  TOut* base = out.data.data() + rec.out_offset;
  for (int pr = 0; pr < rec.rows; ++pr)
    for (int pc = 0; pc < rec.cols; ++pc) {
      TOut* px = base + pr * row_stride + pc * pix_stride;
      for (int v = 0; v < vlen; ++v) {
        TOut x = px[v];
        if constexpr (std::is_same_v<TOut, float>) {
          if (kind == FusedOpKind::BIAS_ADD || kind == FusedOpKind::BIAS_RELU)
            x += plan.bias_lanes[static_cast<size_t>(rec.kb) * vlen + v];
        }
        if (kind == FusedOpKind::RELU || kind == FusedOpKind::BIAS_RELU)
          x = x > TOut{0} ? x : TOut{0};
        px[v] = x;
      }
    }
}

template <typename TIn, typename TWt, typename TOut>
void check_plan_tensors(const ExecutionPlan& plan,
                        const BlockedActivationT<TIn>& in,
                        const BlockedWeightT<TWt>& wt,
                        const BlockedActivationT<TOut>& out, int tid) {
  const PlanGeometry& g = plan.geom;
  if (tid < 0 || tid >= g.threads)
    throw PlanTensorMismatch("replay: thread id out of range");
  if (in.n != g.spec.N || in.cb() != g.in.blocks ||
      in.hp() != g.in.rows_phys || in.wp() != g.in.cols_phys ||
      in.vlen != g.spec.vlen)
    throw PlanTensorMismatch("replay: input tensor does not match the plan");
  if (wt.kb() != g.out.blocks || wt.cb() != g.in.blocks || wt.r != g.spec.R ||
      wt.s != g.spec.S || wt.vlen != g.spec.vlen)
    throw PlanTensorMismatch("replay: weight tensor does not match the plan");
  if (out.n != g.spec.N || out.cb() != g.out.blocks ||
      out.hp() != g.out.rows_phys || out.wp() != g.out.cols_phys ||
      out.vlen != g.spec.vlen)
    throw PlanTensorMismatch("replay: output tensor does not match the plan");
}

template <typename TIn, typename TWt, typename TOut>
void replay_impl(const ExecutionPlan& plan, const BlockedActivationT<TIn>& in,
                 const BlockedWeightT<TWt>& wt, BlockedActivationT<TOut>& out,
                 int tid) {
  check_plan_tensors(plan, in, wt, out, tid);
  const StreamBuffers& sb = plan.streams[tid];
  const TIn* ibase = in.data.data();
  const TWt* wbase = wt.data.data();
  TOut* obase = out.data.data();
  int64_t i = 0;
  for (const Segment& seg : plan.segments[tid]) {
    if (seg.type == SegmentType::CONV_STREAK) {
      const int64_t n_convs = seg.info;
      for (int64_t ci = 0; ci < n_convs; ++ci, ++i) {
        const CompiledKernel& kernel = plan.kernels[sb.var[i]];
        kernel.run(ibase + sb.inp[i], wbase + sb.wt[i], obase + sb.out[i],
                   ibase + sb.pf_inp[i], wbase + sb.pf_wt[i],
                   obase + sb.pf_out[i]);
      }
    } else {
      apply_record_to(plan, out, sb.apply[seg.info]);
    }
  }
}

// binary helpers (little-endian)
void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}
void put_i64(std::ostream& os, int64_t v) {
  const auto u = static_cast<uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(b, 8);
}
void put_f32(std::ostream& os, float f) {
  uint32_t u;
  static_assert(sizeof(u) == sizeof(f));
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}
uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}
int64_t get_i64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return static_cast<int64_t>(v);
}
float get_f32(std::istream& is) {
  const uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void put_view(std::ostream& os, const TensorView& v) {
  put_u32(os, v.rows_phys);
  put_u32(os, v.cols_phys);
  put_u32(os, v.blocks);
  put_u32(os, v.row0);
  put_u32(os, v.col0);
  put_u32(os, v.pix_scale);
}
TensorView get_view(std::istream& is) {
  TensorView v;
  v.rows_phys = static_cast<int>(get_u32(is));
  v.cols_phys = static_cast<int>(get_u32(is));
  v.blocks = static_cast<int>(get_u32(is));
  v.row0 = static_cast<int>(get_u32(is));
  v.col0 = static_cast<int>(get_u32(is));
  v.pix_scale = static_cast<int>(get_u32(is));
  return v;
}

}  // namespace

TensorView activation_view(int extent_rows, int extent_cols, int blocks,
                           int halo_h, int halo_w) {
  TensorView v;
  v.rows_phys = extent_rows + 2 * halo_h;
  v.cols_phys = extent_cols + 2 * halo_w;
  v.blocks = blocks;
  v.row0 = halo_h;
  v.col0 = halo_w;
  v.pix_scale = 1;
  return v;
}

TensorView input_view(const ConvLayerSpec& spec, int halo_h, int halo_w) {
  TensorView v;
  v.rows_phys = spec.H + 2 * halo_h;
  v.cols_phys = spec.W + 2 * halo_w;
  v.blocks = spec.cb();
  v.row0 = halo_h - spec.pad_h;
  v.col0 = halo_w - spec.pad_w;
  v.pix_scale = 1;
  return v;
}

int64_t ExecutionPlan::conv_calls() const {
  int64_t n = 0;
  for (const auto& sb : streams) n += static_cast<int64_t>(sb.var.size());
  return n;
}

std::vector<Segment> encode_segments(const std::vector<CallKind>& trace) {
  if (trace.empty()) throw EmptyTrace("encode_segments: empty call trace");
  std::vector<Segment> segments;
  int64_t apply_ordinal = 0;
  size_t i = 0;
  while (i < trace.size()) {
    if (trace[i] == CallKind::CONV) {
      int64_t len = 0;
      while (i < trace.size() && trace[i] == CallKind::CONV) {
        ++len;
        ++i;
      }
      segments.push_back({SegmentType::CONV_STREAK, len});
    } else {
      segments.push_back({SegmentType::APPLY, apply_ordinal++});
      ++i;
    }
  }
  return segments;
}

std::vector<CallKind> decode_segments(const std::vector<Segment>& segments) {
  std::vector<CallKind> trace;
  for (const Segment& seg : segments) {
    if (seg.type == SegmentType::CONV_STREAK)
      trace.insert(trace.end(), static_cast<size_t>(seg.info),
                   CallKind::CONV);
    else
      trace.push_back(CallKind::APPLY);
  }
  return trace;
}

ExecutionPlan dryrun_forward(const ConvLayerSpec& spec, const LoopOrder& order,
                             const RegisterBlocking& blocking,
                             const ThreadPartition& partition,
                             const std::optional<FusedOp>& fusion,
                             const EngineConfig& cfg, KernelDType dtype) {
  const auto [P, Q] = derive_output_shape(spec);
  const TensorView in = input_view(spec, spec.pad_h, spec.pad_w);
  const TensorView out_view = activation_view(P, Q, spec.kb(), 0, 0);
  return dryrun_forward_views(spec, order, blocking, partition, fusion, in,
                              out_view, cfg, dtype);
}

ExecutionPlan dryrun_forward_views(const ConvLayerSpec& spec,
                                   const LoopOrder& order,
                                   const RegisterBlocking& blocking,
                                   const ThreadPartition& partition,
                                   const std::optional<FusedOp>& fusion,
                                   const TensorView& in_view,
                                   const TensorView& out_view,
                                   const EngineConfig& cfg,
                                   KernelDType dtype) {
  spec.validate();
  const auto [P, Q] = derive_output_shape(spec);
  const int64_t pb = ceil_div(P, blocking.primary.rb_p);
  const int64_t qb = ceil_div(Q, blocking.primary.rb_q);
  if (partition.dims != std::array<int64_t, 4>{spec.N, spec.kb(), pb, qb})
    throw PlanInfeasible(
        "dryrun: thread partition built for a different iteration space");
  if (partition.threads < 1 || partition.items.empty())
    throw PlanInfeasible("dryrun: no thread slots");
  for (int t = 0; t < partition.threads; ++t) {
    int64_t n_items = 0;
    for (const Range& r : partition.items[t]) n_items += r.size();
    if (n_items == 0)
      throw PlanInfeasible("dryrun: empty partition entry for thread " +
                           std::to_string(t));
  }
  const bool need_remainder = P % blocking.primary.rb_p != 0 ||
                              Q % blocking.primary.rb_q != 0;
  if (need_remainder && !blocking.remainder)
    throw PlanInfeasible("dryrun: blocking leaves uncovered tiles");
  if (in_view.row0 < 0 || in_view.col0 < 0)
    throw PlanInfeasible("dryrun: input halo smaller than logical padding");
  if (in_view.row0 + spec.stride * (P - 1) + spec.R > in_view.rows_phys ||
      in_view.col0 + spec.stride * (Q - 1) + spec.S > in_view.cols_phys)
    throw PlanInfeasible("dryrun: input surface too small for the loop nest");
  if (out_view.row0 + out_view.pix_scale * (P - 1) >= out_view.rows_phys ||
      out_view.col0 + out_view.pix_scale * (Q - 1) >= out_view.cols_phys)
    throw PlanInfeasible("dryrun: output surface too small for the loop nest");
  if (fusion) {
    if (dtype == KernelDType::I16 && fusion->kind != FusedOpKind::RELU)
      throw PlanInfeasible("dryrun: integer plans fuse RELU only");
    if (fusion->kind != FusedOpKind::RELU &&
        static_cast<int>(fusion->bias.size()) != spec.K)
      throw PlanInfeasible("dryrun: bias length must equal K");
  }

  ExecutionPlan plan;
  plan.geom.spec = spec;
  plan.geom.in = in_view;
  plan.geom.out = out_view;
  plan.geom.order = order;
  plan.geom.threads = partition.threads;
  plan.geom.lookahead = std::max(1, cfg.prefetch_lookahead);
  plan.geom.dtype = dtype;
  plan.blocking = blocking;
  plan.fusion = fusion;
  if (fusion && fusion->kind != FusedOpKind::RELU) {
    plan.bias_lanes.assign(static_cast<size_t>(spec.kb()) * spec.vlen, 0.0f);
    for (int k = 0; k < spec.K; ++k) plan.bias_lanes[k] = fusion->bias[k];
  }

  auto make_desc = [&](const RegisterBlocking::Tile& tile) {
    MicrokernelDescriptor d;
    d.pass = Pass::FWD;
    d.vlen = spec.vlen;
    d.rb_p = tile.rb_p;
    d.rb_q = tile.rb_q;
    d.r = spec.R;
    d.s = spec.S;
    d.stride = spec.stride;
    d.dtype = dtype;
    d.prefetch_enabled = cfg.prefetch_enabled;
    d.streaming_stores = cfg.streaming_stores;
    d.acc_chain_limit = cfg.acc_chain_limit;
    d.bound_in = cfg.i16_bound_in;
    d.bound_wt = cfg.i16_bound_wt;
    d.channels = spec.C;
    d.geom.in_row_stride = static_cast<int64_t>(in_view.cols_phys) * spec.vlen;
    d.geom.out_row_stride = static_cast<int64_t>(out_view.cols_phys) *
                            spec.vlen * out_view.pix_scale;
    d.geom.out_pix_stride =
        static_cast<int64_t>(spec.vlen) * out_view.pix_scale;
    return d;
  };
  plan.kernel_descs.push_back(make_desc(blocking.primary));
  if (blocking.remainder)
    plan.kernel_descs.push_back(make_desc(*blocking.remainder));
  for (const auto& d : plan.kernel_descs)
    plan.kernels.push_back(dtype == KernelDType::F32
                               ? build_forward_kernel(d)
                               : build_forward_kernel_i16(d));

  DryrunState st;
  st.spec = &spec;
  st.in = &in_view;
  st.out = &out_view;
  st.P = P;
  st.Q = Q;
  st.pb = static_cast<int>(pb);
  st.qb = static_cast<int>(qb);
  st.blocking = blocking;
  st.fused = fusion.has_value();
  if (fusion) st.op = fusion->kind;

  plan.segments.resize(partition.threads);
  plan.streams.resize(partition.threads);
  const int cb_count = spec.cb();
  const int64_t group_tiles = pb * qb;

  for (int tid = 0; tid < partition.threads; ++tid) {
    StreamBuffers& sb = plan.streams[tid];
    std::vector<CallKind> trace;
    for (const Range& range : partition.items[tid]) {
      int64_t pos = range.begin;
      while (pos < range.end) {
        const int64_t group = pos / group_tiles;
        const int64_t tb = pos % group_tiles;
        const int64_t te =
            std::min(group_tiles, tb + (range.end - pos));
        const int n = static_cast<int>(group / spec.kb());
        const int kb = static_cast<int>(group % spec.kb());
        if (!order.pull_in_cb) {
          for (int cb = 0; cb < cb_count; ++cb)
            for (int64_t t = tb; t < te; ++t) {
              const TileCursor tile = make_tile(st, n, kb, t);
              emit_conv(st, sb, trace, tile, cb);
              if (st.fused && cb == cb_count - 1)
                emit_apply(st, sb, trace, tile);
            }
        } else {
          for (int64_t t = tb; t < te; ++t) {
            const TileCursor tile = make_tile(st, n, kb, t);
            for (int cb = 0; cb < cb_count; ++cb)
              emit_conv(st, sb, trace, tile, cb);
            if (st.fused) emit_apply(st, sb, trace, tile);
          }
        }
        pos += te - tb;
      }
    }
    fill_prefetch_streams(sb, plan.geom.lookahead);
    plan.segments[tid] = encode_segments(trace);
  }
  return plan;
}

void replay(const ExecutionPlan& plan, const BlockedActivation& in,
            const BlockedWeight& wt, BlockedActivation& out, int tid) {
  if (plan.geom.dtype != KernelDType::F32)
    throw PlanTensorMismatch("replay: plan was built for integer kernels");
  replay_impl(plan, in, wt, out, tid);
}

void replay(const ExecutionPlan& plan, const BlockedActivationI16& in,
            const BlockedWeightI16& wt, BlockedActivationI32& out, int tid) {
  if (plan.geom.dtype != KernelDType::I16)
    throw PlanTensorMismatch("replay: plan was built for f32 kernels");
  replay_impl(plan, in, wt, out, tid);
}

ValidationReport validate_plan(const ExecutionPlan& plan) {
  ValidationReport report;
  auto fail = [&](const std::string& msg) { report.violations.push_back(msg); };

  const PlanGeometry& g = plan.geom;
  const ConvLayerSpec& spec = g.spec;
  const auto [P, Q] = derive_output_shape(spec);
  const int rb_p = plan.blocking.primary.rb_p;
  const int rb_q = plan.blocking.primary.rb_q;
  const int64_t pb = ceil_div(P, rb_p);
  const int64_t qb = ceil_div(Q, rb_q);
  const int cb_count = spec.cb();
  const int64_t in_total = static_cast<int64_t>(spec.N) * g.in.blocks *
                           g.in.rows_phys * g.in.cols_phys * spec.vlen;
  const int64_t out_total = static_cast<int64_t>(spec.N) * g.out.blocks *
                            g.out.rows_phys * g.out.cols_phys * spec.vlen;
  const int64_t wt_total = static_cast<int64_t>(g.out.blocks) * g.in.blocks *
                           spec.R * spec.S * spec.vlen * spec.vlen;
  const int64_t wt_block = static_cast<int64_t>(spec.R) * spec.S * spec.vlen *
                           spec.vlen;

  std::vector<int> coverage(
      static_cast<size_t>(spec.N) * spec.kb() * cb_count * pb * qb, 0);

  if (static_cast<int>(plan.streams.size()) != g.threads ||
      static_cast<int>(plan.segments.size()) != g.threads) {
    fail("plan thread-slot counts disagree with geometry");
    return report;
  }

  for (int tid = 0; tid < g.threads; ++tid) {
    const StreamBuffers& sb = plan.streams[tid];
    const size_t len = sb.var.size();
    if (sb.inp.size() != len || sb.wt.size() != len || sb.out.size() != len ||
        sb.pf_inp.size() != len || sb.pf_wt.size() != len ||
        sb.pf_out.size() != len) {
      fail("thread " + std::to_string(tid) + ": stream lengths differ");
      continue;
    }
    int64_t streak_total = 0, apply_total = 0;
    for (const Segment& seg : plan.segments[tid]) {
      if (seg.type == SegmentType::CONV_STREAK)
        streak_total += seg.info;
      else
        ++apply_total;
    }
    if (streak_total != static_cast<int64_t>(len))
      fail("thread " + std::to_string(tid) +
           ": segment streak sum != conv stream length");
    if (apply_total != static_cast<int64_t>(sb.apply.size()))
      fail("thread " + std::to_string(tid) +
           ": APPLY segment count != apply record count");

    for (size_t i = 0; i < len; ++i) {
      const std::string where =
          "thread " + std::to_string(tid) + " call " + std::to_string(i);
      if (sb.var[i] < 0 ||
          sb.var[i] >= static_cast<int>(plan.kernels.size())) {
        fail(where + ": bad kernel variant id");
        continue;
      }
      if (sb.inp[i] < 0 || sb.inp[i] >= in_total ||
          sb.out[i] < 0 || sb.out[i] >= out_total ||
          sb.wt[i] < 0 || sb.wt[i] >= wt_total) {
        fail(where + ": offset out of bounds");
        continue;
      }

      // decode the output offset back to (n, k_b, oj0, oi0)
      if (sb.out[i] % spec.vlen != 0) {
        fail(where + ": output offset not lane-aligned");
        continue;
      }
      int64_t pix = sb.out[i] / spec.vlen;
      const int ocol = static_cast<int>(pix % g.out.cols_phys);
      pix /= g.out.cols_phys;
      const int orow = static_cast<int>(pix % g.out.rows_phys);
      pix /= g.out.rows_phys;
      const int okb = static_cast<int>(pix % g.out.blocks);
      const int on = static_cast<int>(pix / g.out.blocks);
      const int drow = orow - g.out.row0;
      const int dcol = ocol - g.out.col0;
      if (on >= spec.N || drow < 0 || dcol < 0 ||
          drow % g.out.pix_scale != 0 || dcol % g.out.pix_scale != 0) {
        fail(where + ": output offset does not decode to a tile origin");
        continue;
      }
      const int oj0 = drow / g.out.pix_scale;
      const int oi0 = dcol / g.out.pix_scale;
      if (oj0 % rb_p != 0 || oi0 % rb_q != 0 || oj0 >= P || oi0 >= Q) {
        fail(where + ": output offset is not a blocking-aligned tile");
        continue;
      }
      const int ojb = oj0 / rb_p, oib = oi0 / rb_q;
      const int er = std::min(rb_p, P - oj0), ec = std::min(rb_q, Q - oi0);
      const MicrokernelDescriptor& kd = plan.kernel_descs[sb.var[i]];
      if (kd.rb_p != er || kd.rb_q != ec)
        fail(where + ": kernel variant extent does not match the tile");

      // weight offset -> (k_b, c_b)
      if (sb.wt[i] % wt_block != 0) {
        fail(where + ": weight offset not block-aligned");
        continue;
      }
      const int64_t wblk = sb.wt[i] / wt_block;
      const int wkb = static_cast<int>(wblk / cb_count);
      const int wcb = static_cast<int>(wblk % cb_count);
      if (wkb != okb) fail(where + ": weight k_b disagrees with output");

      // input offset -> (n, c_b, receptive-field origin)
      if (sb.inp[i] % spec.vlen != 0) {
        fail(where + ": input offset not lane-aligned");
        continue;
      }
      int64_t ipix = sb.inp[i] / spec.vlen;
      const int icol = static_cast<int>(ipix % g.in.cols_phys);
      ipix /= g.in.cols_phys;
      const int irow = static_cast<int>(ipix % g.in.rows_phys);
      ipix /= g.in.rows_phys;
      const int icb = static_cast<int>(ipix % g.in.blocks);
      const int in_ = static_cast<int>(ipix / g.in.blocks);
      if (in_ != on) fail(where + ": input image disagrees with output");
      if (icb != wcb) fail(where + ": input c_b disagrees with weight");
      if (irow != g.in.row0 + spec.stride * oj0 ||
          icol != g.in.col0 + spec.stride * oi0)
        fail(where + ": input offset is not the tile's receptive field");

      const int64_t key =
          (((static_cast<int64_t>(on) * spec.kb() + okb) * cb_count + icb) *
               pb +
           ojb) *
              qb +
          oib;
      coverage[static_cast<size_t>(key)] += 1;

      // prefetch chaining: position i prefetches position i + lookahead,
      // the tail prefetches itself
      const size_t j = i + g.lookahead < len ? i + g.lookahead : i;
      if (sb.pf_inp[i] != sb.inp[j] || sb.pf_wt[i] != sb.wt[j] ||
          sb.pf_out[i] != sb.out[j])
        fail(where + ": prefetch offsets break the chaining rule");
    }
  }

  int64_t missing = 0, duplicated = 0;
  for (const int c : coverage) {
    if (c == 0) ++missing;
    if (c > 1) ++duplicated;
  }
  if (missing > 0)
    fail("coverage: " + std::to_string(missing) +
         " (n,k_b,c_b,ojb,oib) tuples never executed");
  if (duplicated > 0)
    fail("coverage: " + std::to_string(duplicated) +
         " tuples executed more than once");
  return report;
}

void save_plan(const ExecutionPlan& plan, std::ostream& os) {
  os.write("KSPL", 4);
  put_u32(os, 1);  // version

  const ConvLayerSpec& s = plan.geom.spec;
  for (int v : {s.N, s.C, s.K, s.H, s.W, s.R, s.S, s.stride, s.pad_h, s.pad_w,
                s.vlen})
    put_u32(os, static_cast<uint32_t>(v));
  put_view(os, plan.geom.in);
  put_view(os, plan.geom.out);
  for (const LoopSym sym : plan.geom.order.symbols)
    put_u32(os, static_cast<uint32_t>(sym));
  put_u32(os, plan.geom.order.pull_in_cb ? 1 : 0);
  put_u32(os, static_cast<uint32_t>(plan.geom.threads));
  put_u32(os, static_cast<uint32_t>(plan.geom.lookahead));
  put_u32(os, static_cast<uint32_t>(plan.geom.dtype));

  put_u32(os, static_cast<uint32_t>(plan.blocking.primary.rb_p));
  put_u32(os, static_cast<uint32_t>(plan.blocking.primary.rb_q));
  put_u32(os, plan.blocking.remainder ? 1 : 0);
  if (plan.blocking.remainder) {
    put_u32(os, static_cast<uint32_t>(plan.blocking.remainder->rb_p));
    put_u32(os, static_cast<uint32_t>(plan.blocking.remainder->rb_q));
  }

  put_u32(os, static_cast<uint32_t>(plan.kernel_descs.size()));
  for (const MicrokernelDescriptor& d : plan.kernel_descs) {
    for (int v : {static_cast<int>(d.pass), d.vlen, d.rb_p, d.rb_q, d.b_p,
                  d.b_q, d.r, d.s, d.stride, static_cast<int>(d.dtype),
                  d.prefetch_enabled ? 1 : 0, d.streaming_stores ? 1 : 0,
                  d.acc_chain_limit, d.bound_in, d.bound_wt, d.channels})
      put_u32(os, static_cast<uint32_t>(v));
    put_i64(os, d.geom.in_row_stride);
    put_i64(os, d.geom.out_row_stride);
    put_i64(os, d.geom.out_pix_stride);
  }

  put_u32(os, plan.fusion ? 1 : 0);
  if (plan.fusion) {
    put_u32(os, static_cast<uint32_t>(plan.fusion->kind));
    put_u32(os, static_cast<uint32_t>(plan.fusion->bias.size()));
    for (float f : plan.fusion->bias) put_f32(os, f);
  }
  put_u32(os, static_cast<uint32_t>(plan.bias_lanes.size()));
  for (float f : plan.bias_lanes) put_f32(os, f);

  for (int tid = 0; tid < plan.geom.threads; ++tid) {
    const auto& segs = plan.segments[tid];
    put_u32(os, static_cast<uint32_t>(segs.size()));
    for (const Segment& seg : segs) {
      put_u32(os, static_cast<uint32_t>(seg.type));
      put_i64(os, seg.info);
    }
    const StreamBuffers& sb = plan.streams[tid];
    put_u32(os, static_cast<uint32_t>(sb.var.size()));
    for (int32_t v : sb.var) put_u32(os, static_cast<uint32_t>(v));
    for (const auto* stream : {&sb.inp, &sb.wt, &sb.out, &sb.pf_inp,
                               &sb.pf_wt, &sb.pf_out})
      for (int64_t v : *stream) put_i64(os, v);
    put_u32(os, static_cast<uint32_t>(sb.apply.size()));
    for (const ApplyRecord& a : sb.apply) {
      put_u32(os, static_cast<uint32_t>(a.op));
      put_i64(os, a.out_offset);
      put_u32(os, static_cast<uint32_t>(a.rows));
      put_u32(os, static_cast<uint32_t>(a.cols));
      put_u32(os, static_cast<uint32_t>(a.kb));
    }
  }
  if (!os) throw Error("save_plan: write failed");
}

ExecutionPlan load_plan(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "KSPL", 4) != 0)
    throw Error("load_plan: bad magic");
  const uint32_t version = get_u32(is);
  if (version != 1) throw Error("load_plan: unsupported version");

  ExecutionPlan plan;
  ConvLayerSpec& s = plan.geom.spec;
  for (int* f : {&s.N, &s.C, &s.K, &s.H, &s.W, &s.R, &s.S, &s.stride,
                 &s.pad_h, &s.pad_w, &s.vlen})
    *f = static_cast<int>(get_u32(is));
  plan.geom.in = get_view(is);
  plan.geom.out = get_view(is);
  for (LoopSym& sym : plan.geom.order.symbols)
    sym = static_cast<LoopSym>(get_u32(is));
  plan.geom.order.pull_in_cb = get_u32(is) != 0;
  plan.geom.threads = static_cast<int>(get_u32(is));
  plan.geom.lookahead = static_cast<int>(get_u32(is));
  plan.geom.dtype = static_cast<KernelDType>(get_u32(is));

  plan.blocking.primary.rb_p = static_cast<int>(get_u32(is));
  plan.blocking.primary.rb_q = static_cast<int>(get_u32(is));
  if (get_u32(is) != 0) {
    RegisterBlocking::Tile rem;
    rem.rb_p = static_cast<int>(get_u32(is));
    rem.rb_q = static_cast<int>(get_u32(is));
    plan.blocking.remainder = rem;
  }

  const uint32_t n_descs = get_u32(is);
  for (uint32_t i = 0; i < n_descs; ++i) {
    MicrokernelDescriptor d;
    d.pass = static_cast<Pass>(get_u32(is));
    d.vlen = static_cast<int>(get_u32(is));
    d.rb_p = static_cast<int>(get_u32(is));
    d.rb_q = static_cast<int>(get_u32(is));
    d.b_p = static_cast<int>(get_u32(is));
    d.b_q = static_cast<int>(get_u32(is));
    d.r = static_cast<int>(get_u32(is));
    d.s = static_cast<int>(get_u32(is));
    d.stride = static_cast<int>(get_u32(is));
    d.dtype = static_cast<KernelDType>(get_u32(is));
    d.prefetch_enabled = get_u32(is) != 0;
    d.streaming_stores = get_u32(is) != 0;
    d.acc_chain_limit = static_cast<int>(get_u32(is));
    d.bound_in = static_cast<int>(get_u32(is));
    d.bound_wt = static_cast<int>(get_u32(is));
    d.channels = static_cast<int>(get_u32(is));
    d.geom.in_row_stride = get_i64(is);
    d.geom.out_row_stride = get_i64(is);
    d.geom.out_pix_stride = get_i64(is);
    plan.kernel_descs.push_back(d);
    plan.kernels.push_back(plan.geom.dtype == KernelDType::F32
                               ? build_forward_kernel(d)
                               : build_forward_kernel_i16(d));
  }

  if (get_u32(is) != 0) {
    FusedOp op;
    op.kind = static_cast<FusedOpKind>(get_u32(is));
    op.bias.resize(get_u32(is));
    for (float& f : op.bias) f = get_f32(is);
    plan.fusion = op;
  }
  plan.bias_lanes.resize(get_u32(is));
  for (float& f : plan.bias_lanes) f = get_f32(is);

  plan.segments.resize(plan.geom.threads);
  plan.streams.resize(plan.geom.threads);
  for (int tid = 0; tid < plan.geom.threads; ++tid) {
    const uint32_t n_segs = get_u32(is);
    plan.segments[tid].resize(n_segs);
    for (Segment& seg : plan.segments[tid]) {
      seg.type = static_cast<SegmentType>(get_u32(is));
      seg.info = get_i64(is);
    }
    StreamBuffers& sb = plan.streams[tid];
    const uint32_t len = get_u32(is);
    sb.var.resize(len);
    for (int32_t& v : sb.var) v = static_cast<int32_t>(get_u32(is));
    for (auto* stream : {&sb.inp, &sb.wt, &sb.out, &sb.pf_inp, &sb.pf_wt,
                         &sb.pf_out}) {
      stream->resize(len);
      for (int64_t& v : *stream) v = get_i64(is);
    }
    sb.apply.resize(get_u32(is));
    for (ApplyRecord& a : sb.apply) {
      a.op = static_cast<int32_t>(get_u32(is));
      a.out_offset = get_i64(is);
      a.rows = static_cast<int32_t>(get_u32(is));
      a.cols = static_cast<int32_t>(get_u32(is));
      a.kb = static_cast<int32_t>(get_u32(is));
    }
  }
  if (!is) throw Error("load_plan: truncated stream");
  return plan;
}

bool plan_streams_equal(const ExecutionPlan& a, const ExecutionPlan& b) {
  return a.geom == b.geom && a.blocking == b.blocking &&
         a.kernel_descs == b.kernel_descs && a.fusion == b.fusion &&
         a.bias_lanes == b.bias_lanes && a.segments == b.segments &&
         a.streams == b.streams;
}

}  // namespace dconv
