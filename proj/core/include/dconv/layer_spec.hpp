#pragma once

#include <cstdint>
#include <utility>

#include "dconv/errors.hpp"

namespace dconv {

// One convolution problem: minibatch N, feature maps C -> K, input H x W,
// filter R x S, spatial stride, logical zero padding, channel block width.
struct ConvLayerSpec {
  int N = 1;
  int C = 1;
  int K = 1;
  int H = 1;
  int W = 1;
  int R = 1;
  int S = 1;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int vlen = 16;

  int cb() const { return static_cast<int>(ceil_div_i(C, vlen)); }
  int kb() const { return static_cast<int>(ceil_div_i(K, vlen)); }

  // output extents; valid only after validate()
  int P() const { return (H + 2 * pad_h - R) / stride + 1; }
  int Q() const { return (W + 2 * pad_w - S) / stride + 1; }

  void validate() const;

  bool operator==(const ConvLayerSpec&) const = default;

 private:
  static int64_t ceil_div_i(int64_t a, int64_t b) { return (a + b - 1) / b; }
};

// "same" geometry default for odd filters: pad = (R-1)/2
ConvLayerSpec make_layer_spec(int N, int C, int K, int H, int W, int R, int S,
                              int stride, int vlen = 16);
ConvLayerSpec make_layer_spec(int N, int C, int K, int H, int W, int R, int S,
                              int stride, int pad_h, int pad_w, int vlen);

// Output spatial extents (P, Q). The last filter placement may stop short of
// the padded border when the stride does not divide the span; the count of
// valid placements is floor((H + 2*pad_h - R) / stride) + 1.
std::pair<int, int> derive_output_shape(const ConvLayerSpec& spec);

}  // namespace dconv
