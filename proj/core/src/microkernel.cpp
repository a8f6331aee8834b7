#include "dconv/microkernel.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

#include "dconv/util.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace dconv {

namespace {

constexpr int kMaxVlen = 64;
constexpr int kFwdChunk = 8;  // output pixels processed per register tile
constexpr int kI16Chunk = 4;

// V = 0 selects the runtime-vlen fallback path
template <int V>
void fwd_f32_kernel(const MicrokernelDescriptor& d, const float* in,
                    const float* wt, float* out, const float* pf_in,
                    const float* pf_wt, const float* pf_out) {
  constexpr int MV = V == 0 ? kMaxVlen : V;
  const int vl = V == 0 ? d.vlen : V;
  const int64_t in_row = d.geom.in_row_stride;
  const int64_t out_row = d.geom.out_row_stride;
  const int64_t out_pix = d.geom.out_pix_stride;

  if (d.prefetch_enabled) {
    prefetch_read(pf_in);
    prefetch_read(pf_wt);
    prefetch_write(pf_out);
  }

  const int npix = d.rb_p * d.rb_q;
  for (int base = 0; base < npix; base += kFwdChunk) {
    const int cs = std::min(kFwdChunk, npix - base);
    const float* ib[kFwdChunk];
    float* ob[kFwdChunk];
    for (int u = 0; u < cs; ++u) {
      const int p = (base + u) / d.rb_q;
      const int q = (base + u) % d.rb_q;
      ib[u] = in + p * d.stride * in_row +
              static_cast<int64_t>(q) * d.stride * vl;
      ob[u] = out + p * out_row + static_cast<int64_t>(q) * out_pix;
    }

    float acc[kFwdChunk][MV];
    for (int u = 0; u < cs; ++u)
      for (int v = 0; v < vl; ++v) acc[u][v] = ob[u][v];

    // fixed (r, s, c) reduction order per output element
    for (int r = 0; r < d.r; ++r) {
      if (d.prefetch_enabled && r + 1 < d.r)
        prefetch_read(in + (r + 1) * in_row);
      for (int s = 0; s < d.s; ++s) {
        const float* wrs = wt + (static_cast<int64_t>(r) * d.s + s) * vl * vl;
        const int64_t ioff = r * in_row + static_cast<int64_t>(s) * vl;
        for (int c = 0; c < vl; ++c) {
          const float* w = wrs + static_cast<int64_t>(c) * vl;
          for (int u = 0; u < cs; ++u) {
            const float a = ib[u][ioff + c];
            for (int v = 0; v < vl; ++v) acc[u][v] += a * w[v];
          }
        }
      }
    }

    for (int u = 0; u < cs; ++u) {
#if defined(__AVX512F__)
      if constexpr (V == 16) {
        if (d.streaming_stores &&
            (reinterpret_cast<uintptr_t>(ob[u]) & 63u) == 0) {
          _mm512_stream_ps(ob[u], _mm512_loadu_ps(acc[u]));
          continue;
        }
      }
#endif
      for (int v = 0; v < vl; ++v) ob[u][v] = acc[u][v];
    }
  }
}

// Exact int16 x int16 -> int32 accumulation. Segment sums wrap mod 2^32,
// which matches the widening oracle truncated to 32 bits regardless of the
// flush points; the certifier guarantees no wrap within declared bounds.
template <int V>
void fwd_i16_kernel(const MicrokernelDescriptor& d, const int16_t* in,
                    const int16_t* wt, int32_t* out, const int16_t* pf_in,
                    const int16_t* pf_wt, const int32_t* pf_out) {
  constexpr int MV = V == 0 ? kMaxVlen : V;
  const int vl = V == 0 ? d.vlen : V;
  const int64_t in_row = d.geom.in_row_stride;
  const int64_t out_row = d.geom.out_row_stride;
  const int64_t out_pix = d.geom.out_pix_stride;

  if (d.prefetch_enabled) {
    prefetch_read(pf_in);
    prefetch_read(pf_wt);
    prefetch_write(pf_out);
  }

  const int npix = d.rb_p * d.rb_q;
  for (int base = 0; base < npix; base += kI16Chunk) {
    const int cs = std::min(kI16Chunk, npix - base);
    const int16_t* ib[kI16Chunk];
    int32_t* ob[kI16Chunk];
    for (int u = 0; u < cs; ++u) {
      const int p = (base + u) / d.rb_q;
      const int q = (base + u) % d.rb_q;
      ib[u] = in + p * d.stride * in_row +
              static_cast<int64_t>(q) * d.stride * vl;
      ob[u] = out + p * out_row + static_cast<int64_t>(q) * out_pix;
    }

    uint32_t total[kI16Chunk][MV];
    uint32_t seg[kI16Chunk][MV];
    for (int u = 0; u < cs; ++u)
      for (int v = 0; v < vl; ++v) {
        total[u][v] = static_cast<uint32_t>(ob[u][v]);
        seg[u][v] = 0;
      }

    int chain = 0;
    for (int r = 0; r < d.r; ++r)
      for (int s = 0; s < d.s; ++s) {
        const int16_t* wrs = wt + (static_cast<int64_t>(r) * d.s + s) * vl * vl;
        const int64_t ioff = r * in_row + static_cast<int64_t>(s) * vl;
        for (int c = 0; c < vl; ++c) {
          const int16_t* w = wrs + static_cast<int64_t>(c) * vl;
          for (int u = 0; u < cs; ++u) {
            const int32_t a = ib[u][ioff + c];
            for (int v = 0; v < vl; ++v)
              seg[u][v] +=
                  static_cast<uint32_t>(a * static_cast<int32_t>(w[v]));
          }
          if (++chain == d.acc_chain_limit) {
            for (int u = 0; u < cs; ++u)
              for (int v = 0; v < vl; ++v) {
                total[u][v] += seg[u][v];
                seg[u][v] = 0;
              }
            chain = 0;
          }
        }
      }

    for (int u = 0; u < cs; ++u)
      for (int v = 0; v < vl; ++v)
        ob[u][v] = static_cast<int32_t>(total[u][v] + seg[u][v]);
  }
}

// vlen x vlen dW block for one (r, s); pixels visited row-major so that
// sequential invocations over disjoint tiles reproduce the union bitwise
template <int V>
void upd_f32_kernel(const MicrokernelDescriptor& d, const float* in,
                    const float* grad, float* dw, const float* pf_in,
                    const float* pf_grad, const float* pf_dw) {
  constexpr int MV = V == 0 ? kMaxVlen : V;
  const int vl = V == 0 ? d.vlen : V;
  const int64_t in_row = d.geom.in_row_stride;
  const int64_t grad_row = d.geom.out_row_stride;

  if (d.prefetch_enabled) {
    prefetch_read(pf_in);
    prefetch_read(pf_grad);
    prefetch_write(pf_dw);
  }

  float acc[MV][MV];
  for (int c = 0; c < vl; ++c)
    for (int v = 0; v < vl; ++v) acc[c][v] = dw[c * vl + v];

  for (int p = 0; p < d.b_p; ++p) {
    const float* irow = in + p * d.stride * in_row;
    const float* grow = grad + p * grad_row;
    if (d.prefetch_enabled && p + 1 < d.b_p)
      prefetch_read(in + (p + 1) * d.stride * in_row);
    for (int q = 0; q < d.b_q; ++q) {
      const float* ip = irow + static_cast<int64_t>(q) * d.stride * vl;
      const float* gp = grow + static_cast<int64_t>(q) * vl;
      for (int c = 0; c < vl; ++c) {
        const float a = ip[c];
        for (int v = 0; v < vl; ++v) acc[c][v] += a * gp[v];
      }
    }
  }

  for (int c = 0; c < vl; ++c)
    for (int v = 0; v < vl; ++v) dw[c * vl + v] = acc[c][v];
}

CompiledKernel::FnF32 pick_fwd_f32(int vlen) {
  switch (vlen) {
    case 4: return &fwd_f32_kernel<4>;
    case 8: return &fwd_f32_kernel<8>;
    case 16: return &fwd_f32_kernel<16>;
    default: return &fwd_f32_kernel<0>;
  }
}

CompiledKernel::FnI16 pick_fwd_i16(int vlen) {
  switch (vlen) {
    case 4: return &fwd_i16_kernel<4>;
    case 8: return &fwd_i16_kernel<8>;
    case 16: return &fwd_i16_kernel<16>;
    default: return &fwd_i16_kernel<0>;
  }
}

CompiledKernel::FnF32 pick_upd_f32(int vlen) {
  switch (vlen) {
    case 4: return &upd_f32_kernel<4>;
    case 8: return &upd_f32_kernel<8>;
    case 16: return &upd_f32_kernel<16>;
    default: return &upd_f32_kernel<0>;
  }
}

void validate_common(const MicrokernelDescriptor& d) {
  if (d.vlen < 1 || d.vlen > kMaxVlen)
    throw InvalidDescriptor("vlen out of range [1, 64]");
  if (d.r < 1 || d.s < 1 || d.stride < 1)
    throw InvalidDescriptor("filter extents and stride must be >= 1");
  if (d.geom.in_row_stride < 1 || d.geom.out_row_stride < 1)
    throw InvalidDescriptor("row strides must be >= 1");
}

}  // namespace

void certify_i16_bounds(const MicrokernelDescriptor& d) {
  const int64_t budget = std::numeric_limits<int32_t>::max();
  if (d.bound_in < 1 || d.bound_wt < 1)
    throw OverflowRisk("declared i16 bounds must be >= 1");
  if (d.acc_chain_limit < 1)
    throw OverflowRisk("acc_chain_limit must be >= 1");
  const int64_t prod = 2ll * d.bound_in * d.bound_wt;
  const int64_t total = static_cast<int64_t>(d.r) * d.s * d.channels * prod;
  if (total > budget)
    throw OverflowRisk("full reduction of " + std::to_string(total) +
                       " exceeds the 2^31-1 accumulator budget");
  if (static_cast<int64_t>(d.acc_chain_limit) * prod > budget)
    throw OverflowRisk("accumulation chain of " +
                       std::to_string(d.acc_chain_limit) +
                       " products exceeds the 2^31-1 accumulator budget");
}

CompiledKernel build_forward_kernel(const MicrokernelDescriptor& desc) {
  validate_common(desc);
  if (desc.pass != Pass::FWD)
    throw InvalidDescriptor("build_forward_kernel: pass must be FWD");
  if (desc.dtype != KernelDType::F32)
    throw InvalidDescriptor("build_forward_kernel: dtype must be f32");
  if (desc.rb_p < 1 || desc.rb_q < 1)
    throw InvalidDescriptor("register blocking must be >= 1");
  if (desc.geom.out_pix_stride < 1)
    throw InvalidDescriptor("out_pix_stride must be >= 1");
  CompiledKernel k;
  k.desc_ = desc;
  k.f32_ = pick_fwd_f32(desc.vlen);
  return k;
}

CompiledKernel build_forward_kernel_i16(const MicrokernelDescriptor& desc) {
  validate_common(desc);
  if (desc.pass != Pass::FWD)
    throw InvalidDescriptor("build_forward_kernel_i16: pass must be FWD");
  if (desc.dtype != KernelDType::I16)
    throw InvalidDescriptor("build_forward_kernel_i16: dtype must be i16");
  if (desc.rb_p < 1 || desc.rb_q < 1)
    throw InvalidDescriptor("register blocking must be >= 1");
  certify_i16_bounds(desc);
  CompiledKernel k;
  k.desc_ = desc;
  k.i16_ = pick_fwd_i16(desc.vlen);
  return k;
}

CompiledKernel build_update_kernel(const MicrokernelDescriptor& desc) {
  validate_common(desc);
  if (desc.pass != Pass::UPD)
    throw InvalidDescriptor("build_update_kernel: pass must be UPD");
  if (desc.dtype != KernelDType::F32)
    throw InvalidDescriptor("update kernels are f32 only");
  if (desc.b_p < 1 || desc.b_q < 1)
    throw InvalidDescriptor("spatial blocking must be >= 1");
  CompiledKernel k;
  k.desc_ = desc;
  k.f32_ = pick_upd_f32(desc.vlen);
  return k;
}

RegisterBlocking select_register_blocking(const ConvLayerSpec& spec,
                                          const EngineConfig& cfg) {
  const auto [P, Q] = derive_output_shape(spec);
  int rbq = std::min(Q, cfg.max_accumulators);
  int rbp = 1;
  if (rbq < cfg.min_accumulators) {
    // one row is too short: block extra rows sharing the loaded weights
    rbp = std::min<int>(P, static_cast<int>(ceil_div(cfg.min_accumulators, rbq)));
    while (rbp > 1 && rbp * rbq > cfg.max_accumulators) --rbp;
  }
  RegisterBlocking rb;
  rb.primary = {rbp, rbq};
  if (rbp == 1) {
    if (Q % rbq != 0) rb.remainder = RegisterBlocking::Tile{1, Q % rbq};
  } else {
    // rbp > 1 implies rbq == Q, so only the row count can have a remainder
    if (P % rbp != 0) rb.remainder = RegisterBlocking::Tile{P % rbp, Q};
  }
  return rb;
}

}  // namespace dconv
