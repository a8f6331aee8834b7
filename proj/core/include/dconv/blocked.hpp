#pragma once

#include <cstdint>

#include "dconv/layer_spec.hpp"
#include "dconv/tensor.hpp"
#include "dconv/util.hpp"

namespace dconv {

// Activation in blocked layout [n][c_b][h][w][c] with the channel block as
// the innermost, fast-running dimension. Logical zero padding is materialized
// as a physical halo (halo_h/halo_w rows and columns of zeros on every side)
// so kernels never branch on boundaries. Channel lanes past `c` in the last
// block are zero and stay zero through every pass.
template <typename T>
struct BlockedActivationT {
  int n = 0;
  int c = 0;  // logical channel count
  int h = 0;  // logical spatial extents
  int w = 0;
  int vlen = 16;
  int halo_h = 0;
  int halo_w = 0;
  float scale = 1.0f;  // quantization scale for integer tensors
  aligned_vector<T> data;

  BlockedActivationT() = default;
  BlockedActivationT(int n_, int c_, int h_, int w_, int vlen_, int halo_h_ = 0,
                     int halo_w_ = 0)
      : n(n_), c(c_), h(h_), w(w_), vlen(vlen_), halo_h(halo_h_),
        halo_w(halo_w_),
        data(static_cast<size_t>(n_) * blocks(c_, vlen_) * (h_ + 2 * halo_h_) *
                 (w_ + 2 * halo_w_) * vlen_,
             T{}) {}

  static int blocks(int channels, int v) {
    return static_cast<int>(ceil_div(channels, v));
  }

  int cb() const { return blocks(c, vlen); }
  int hp() const { return h + 2 * halo_h; }
  int wp() const { return w + 2 * halo_w; }
  int64_t row_stride() const { return static_cast<int64_t>(wp()) * vlen; }

  // element offset of lane 0 at physical coordinates (ph, pw)
  int64_t offset(int img, int block, int ph, int pw) const {
    return (((static_cast<int64_t>(img) * cb() + block) * hp() + ph) * wp() +
            pw) *
           vlen;
  }
  // logical coordinates (interior indexing)
  int64_t offset_logical(int img, int block, int y, int x) const {
    return offset(img, block, y + halo_h, x + halo_w);
  }

  T* at(int img, int block, int ph, int pw) {
    return data.data() + offset(img, block, ph, pw);
  }
  const T* at(int img, int block, int ph, int pw) const {
    return data.data() + offset(img, block, ph, pw);
  }

  void fill_zero() { std::fill(data.begin(), data.end(), T{}); }

  // zero only the halo frame, leaving the interior intact
  void zero_halo() {
    if (halo_h == 0 && halo_w == 0) return;
    for (int img = 0; img < n; ++img)
      for (int b = 0; b < cb(); ++b)
        for (int y = 0; y < hp(); ++y) {
          const bool border_row = y < halo_h || y >= halo_h + h;
          for (int x = 0; x < wp(); ++x) {
            if (!border_row && x >= halo_w && x < halo_w + w) continue;
            T* lane = at(img, b, y, x);
            for (int v = 0; v < vlen; ++v) lane[v] = T{};
          }
        }
  }
};

// Weight in blocked layout [k_b][c_b][r][s][c][k]; both channel dimensions
// are blocked by vlen, tail lanes zero.
template <typename T>
struct BlockedWeightT {
  int k = 0;
  int c = 0;
  int r = 0;
  int s = 0;
  int vlen = 16;
  float scale = 1.0f;
  aligned_vector<T> data;

  BlockedWeightT() = default;
  BlockedWeightT(int k_, int c_, int r_, int s_, int vlen_)
      : k(k_), c(c_), r(r_), s(s_), vlen(vlen_),
        data(static_cast<size_t>(blocks(k_, vlen_)) * blocks(c_, vlen_) * r_ *
                 s_ * vlen_ * vlen_,
             T{}) {}

  static int blocks(int channels, int v) {
    return static_cast<int>(ceil_div(channels, v));
  }

  int kb() const { return blocks(k, vlen); }
  int cb() const { return blocks(c, vlen); }
  int64_t block_stride() const {
    return static_cast<int64_t>(r) * s * vlen * vlen;
  }

  // element offset of (kb, cb, r, s, lane_c=0, lane_k=0)
  int64_t offset(int kblk, int cblk, int fr, int fs) const {
    return (((static_cast<int64_t>(kblk) * cb() + cblk) * r + fr) * s + fs) *
           vlen * vlen;
  }

  T* at(int kblk, int cblk, int fr, int fs) {
    return data.data() + offset(kblk, cblk, fr, fs);
  }
  const T* at(int kblk, int cblk, int fr, int fs) const {
    return data.data() + offset(kblk, cblk, fr, fs);
  }

  void fill_zero() { std::fill(data.begin(), data.end(), T{}); }
};

using BlockedActivation = BlockedActivationT<float>;
using BlockedActivationI16 = BlockedActivationT<int16_t>;
using BlockedActivationI32 = BlockedActivationT<int32_t>;
using BlockedWeight = BlockedWeightT<float>;
using BlockedWeightI16 = BlockedWeightT<int16_t>;

template <typename T>
BlockedActivationT<T> to_blocked_activation(const Tensor4<T>& nchw, int vlen,
                                            int halo_h, int halo_w) {
  BlockedActivationT<T> out(static_cast<int>(nchw.dim(0)),
                            static_cast<int>(nchw.dim(1)),
                            static_cast<int>(nchw.dim(2)),
                            static_cast<int>(nchw.dim(3)), vlen, halo_h,
                            halo_w);
  for (int img = 0; img < out.n; ++img)
    for (int ch = 0; ch < out.c; ++ch)
      for (int y = 0; y < out.h; ++y) {
        T* lane = out.at(img, ch / vlen, y + halo_h, halo_w) + ch % vlen;
        for (int x = 0; x < out.w; ++x) lane[x * static_cast<int64_t>(vlen)] = nchw(img, ch, y, x);
      }
  return out;
}

template <typename T>
BlockedActivationT<T> to_blocked_activation(const Tensor4<T>& nchw,
                                            const ConvLayerSpec& spec) {
  require_shape(nchw, spec.N, spec.C, spec.H, spec.W, "to_blocked_activation");
  return to_blocked_activation(nchw, spec.vlen, spec.pad_h, spec.pad_w);
}

template <typename T>
Tensor4<T> from_blocked_activation(const BlockedActivationT<T>& blk) {
  Tensor4<T> out(blk.n, blk.c, blk.h, blk.w);
  for (int img = 0; img < blk.n; ++img)
    for (int ch = 0; ch < blk.c; ++ch)
      for (int y = 0; y < blk.h; ++y) {
        const T* lane =
            blk.at(img, ch / blk.vlen, y + blk.halo_h, blk.halo_w) +
            ch % blk.vlen;
        for (int x = 0; x < blk.w; ++x)
          out(img, ch, y, x) = lane[x * static_cast<int64_t>(blk.vlen)];
      }
  return out;
}

template <typename T>
Tensor4<T> from_blocked_activation(const BlockedActivationT<T>& blk,
                                   const ConvLayerSpec& spec) {
  if (blk.n != spec.N || blk.c != spec.C || blk.h != spec.H || blk.w != spec.W)
    throw ShapeMismatch("from_blocked_activation: blocked dims disagree with spec");
  return from_blocked_activation(blk);
}

template <typename T>
BlockedWeightT<T> to_blocked_weight(const Tensor4<T>& kcrs, int vlen) {
  BlockedWeightT<T> out(static_cast<int>(kcrs.dim(0)),
                        static_cast<int>(kcrs.dim(1)),
                        static_cast<int>(kcrs.dim(2)),
                        static_cast<int>(kcrs.dim(3)), vlen);
  for (int ko = 0; ko < out.k; ++ko)
    for (int ci = 0; ci < out.c; ++ci)
      for (int fr = 0; fr < out.r; ++fr)
        for (int fs = 0; fs < out.s; ++fs)
          out.at(ko / vlen, ci / vlen, fr, fs)[(ci % vlen) * vlen + ko % vlen] =
              kcrs(ko, ci, fr, fs);
  return out;
}

template <typename T>
BlockedWeightT<T> to_blocked_weight(const Tensor4<T>& kcrs,
                                    const ConvLayerSpec& spec) {
  require_shape(kcrs, spec.K, spec.C, spec.R, spec.S, "to_blocked_weight");
  return to_blocked_weight(kcrs, spec.vlen);
}

template <typename T>
Tensor4<T> from_blocked_weight(const BlockedWeightT<T>& blk) {
  Tensor4<T> out(blk.k, blk.c, blk.r, blk.s);
  for (int ko = 0; ko < blk.k; ++ko)
    for (int ci = 0; ci < blk.c; ++ci)
      for (int fr = 0; fr < blk.r; ++fr)
        for (int fs = 0; fs < blk.s; ++fs)
          out(ko, ci, fr, fs) = blk.at(ko / blk.vlen, ci / blk.vlen, fr,
                                       fs)[(ci % blk.vlen) * blk.vlen +
                                           ko % blk.vlen];
  return out;
}

}  // namespace dconv
