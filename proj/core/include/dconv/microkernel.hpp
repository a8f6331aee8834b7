#pragma once

#include <cstdint>
#include <optional>

#include "dconv/config.hpp"
#include "dconv/errors.hpp"
#include "dconv/layer_spec.hpp"

namespace dconv {

enum class Pass { FWD, UPD };
enum class KernelDType { F32, I16 };

// Element strides of the sub-tensors a kernel touches, fixed at build time.
// out_pix_stride is vlen for contiguous output pixels; the 1x1 backward
// scatter widens it to stride*vlen.
struct KernelGeometry {
  int64_t in_row_stride = 0;
  int64_t out_row_stride = 0;
  int64_t out_pix_stride = 0;

  bool operator==(const KernelGeometry&) const = default;
};

// Specialization parameters of one small-convolution kernel. FWD kernels
// compute an rb_p x rb_q output tile for one (n, k_b, c_b) triple; UPD
// kernels accumulate one vlen x vlen dW block for one (r, s) over a
// b_p x b_q pixel tile.
struct MicrokernelDescriptor {
  Pass pass = Pass::FWD;
  int vlen = 16;
  int rb_p = 1;
  int rb_q = 1;
  int b_p = 1;
  int b_q = 1;
  int r = 1;
  int s = 1;
  int stride = 1;
  KernelDType dtype = KernelDType::F32;
  bool prefetch_enabled = true;
  bool streaming_stores = false;
  int acc_chain_limit = 512;
  int bound_in = 256;   // declared |value| bounds, i16 only
  int bound_wt = 256;
  int channels = 16;    // total reduction channels C (i16 overflow cert)
  KernelGeometry geom;

  bool operator==(const MicrokernelDescriptor&) const = default;
};

// rejects i16 descriptors whose declared bounds can overflow a 32-bit
// accumulator: both the full R*S*C reduction and one accumulation-chain
// segment must stay within 2^31 - 1 (with a 2x margin on the product bound)
void certify_i16_bounds(const MicrokernelDescriptor& desc);

// Immutable once built; safe to call concurrently. The three prefetch
// addresses are hints only and never affect results.
class CompiledKernel {
 public:
  using FnF32 = void (*)(const MicrokernelDescriptor&, const float*,
                         const float*, float*, const float*, const float*,
                         const float*);
  using FnI16 = void (*)(const MicrokernelDescriptor&, const int16_t*,
                         const int16_t*, int32_t*, const int16_t*,
                         const int16_t*, const int32_t*);

  CompiledKernel() = default;

  const MicrokernelDescriptor& descriptor() const { return desc_; }

  void run(const float* in, const float* wt, float* out, const float* pf_in,
           const float* pf_wt, const float* pf_out) const {
    f32_(desc_, in, wt, out, pf_in, pf_wt, pf_out);
  }
  void run(const int16_t* in, const int16_t* wt, int32_t* out,
           const int16_t* pf_in, const int16_t* pf_wt,
           const int32_t* pf_out) const {
    i16_(desc_, in, wt, out, pf_in, pf_wt, pf_out);
  }

  bool has_f32() const { return f32_ != nullptr; }
  bool has_i16() const { return i16_ != nullptr; }

 private:
  friend CompiledKernel build_forward_kernel(const MicrokernelDescriptor&);
  friend CompiledKernel build_forward_kernel_i16(const MicrokernelDescriptor&);
  friend CompiledKernel build_update_kernel(const MicrokernelDescriptor&);

  MicrokernelDescriptor desc_;
  FnF32 f32_ = nullptr;
  FnI16 i16_ = nullptr;
};

// O'[p][q][k] += sum_{r,s,c} W'[r][s][c][k] * I'[stride*p+r][stride*q+s][c];
// the output tile is read once before and written once after the full
// (r, s, c) reduction, and rb_p rows share the loaded weights.
CompiledKernel build_forward_kernel(const MicrokernelDescriptor& desc);

// int16 x int16 products accumulated exactly in 32 bits; partial sums are
// flushed to the output accumulator every <= acc_chain_limit products
CompiledKernel build_forward_kernel_i16(const MicrokernelDescriptor& desc);

// dW'[c][k] += sum_{p,q} I'[stride*p][stride*q][c] * dO'[p][q][k]
// over a b_p x b_q pixel tile, pixels visited row-major
CompiledKernel build_update_kernel(const MicrokernelDescriptor& desc);

struct RegisterBlocking {
  struct Tile {
    int rb_p = 1;
    int rb_q = 1;
    bool operator==(const Tile&) const = default;
  };
  Tile primary;
  std::optional<Tile> remainder;

  bool operator==(const RegisterBlocking&) const = default;
};

// Maximizes RB_Q <= Q under min/max accumulator bounds; widens RB_P (pixel
// blocking) when a single row is too short to hide FMA latency. The
// remainder tile covers Q mod RB_Q (or P mod RB_P) so primary + remainder
// tile P x Q exactly.
RegisterBlocking select_register_blocking(const ConvLayerSpec& spec,
                                          const EngineConfig& cfg = {});

}  // namespace dconv
