#include "dconv/layer_spec.hpp"

#include <string>

namespace dconv {

void ConvLayerSpec::validate() const {
  if (N < 1 || C < 1 || K < 1 || H < 1 || W < 1 || R < 1 || S < 1)
    throw InvalidLayerSpec("all tensor extents must be >= 1");
  if (stride < 1) throw InvalidLayerSpec("stride must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw InvalidLayerSpec("padding must be >= 0");
  if (vlen < 1) throw InvalidLayerSpec("vlen must be >= 1");
  if (R > H + 2 * pad_h || S > W + 2 * pad_w)
    throw NonIntegralShape("filter exceeds padded input: R=" +
                           std::to_string(R) + " S=" + std::to_string(S) +
                           " vs padded " + std::to_string(H + 2 * pad_h) + "x" +
                           std::to_string(W + 2 * pad_w));
}

ConvLayerSpec make_layer_spec(int N, int C, int K, int H, int W, int R, int S,
                              int stride, int vlen) {
  const int ph = (R % 2 == 1) ? (R - 1) / 2 : 0;
  const int pw = (S % 2 == 1) ? (S - 1) / 2 : 0;
  return make_layer_spec(N, C, K, H, W, R, S, stride, ph, pw, vlen);
}

ConvLayerSpec make_layer_spec(int N, int C, int K, int H, int W, int R, int S,
                              int stride, int pad_h, int pad_w, int vlen) {
  ConvLayerSpec s;
  s.N = N;
  s.C = C;
  s.K = K;
  s.H = H;
  s.W = W;
  s.R = R;
  s.S = S;
  s.stride = stride;
  s.pad_h = pad_h;
  s.pad_w = pad_w;
  s.vlen = vlen;
  s.validate();
  return s;
}

std::pair<int, int> derive_output_shape(const ConvLayerSpec& spec) {
  spec.validate();
  const int span_h = spec.H + 2 * spec.pad_h - spec.R;
  const int span_w = spec.W + 2 * spec.pad_w - spec.S;
  // validate() already rejects negative spans
  return {span_h / spec.stride + 1, span_w / spec.stride + 1};
}

}  // namespace dconv
