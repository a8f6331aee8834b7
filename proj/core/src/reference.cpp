#include "dconv/reference.hpp"

namespace dconv {

namespace {

template <typename T, typename Acc, typename Out>
Tensor4<Out> forward_loops(const ConvLayerSpec& spec, const Tensor4<T>& input,
                           const Tensor4<T>& weight) {
  spec.validate();
  require_shape(input, spec.N, spec.C, spec.H, spec.W, "conv_forward input");
  require_shape(weight, spec.K, spec.C, spec.R, spec.S, "conv_forward weight");
  const auto [P, Q] = derive_output_shape(spec);
  Tensor4<Out> out(spec.N, spec.K, P, Q);
  for (int n = 0; n < spec.N; ++n)
    for (int k = 0; k < spec.K; ++k)
      for (int oj = 0; oj < P; ++oj)
        for (int oi = 0; oi < Q; ++oi) {
          const int ij = spec.stride * oj - spec.pad_h;
          const int ii = spec.stride * oi - spec.pad_w;
          Acc acc = 0;
          for (int c = 0; c < spec.C; ++c)
            for (int r = 0; r < spec.R; ++r)
              for (int s = 0; s < spec.S; ++s) {
                const int y = ij + r, x = ii + s;
                if (y < 0 || y >= spec.H || x < 0 || x >= spec.W) continue;
                acc += static_cast<Acc>(input(n, c, y, x)) *
                       static_cast<Acc>(weight(k, c, r, s));
              }
          out(n, k, oj, oi) = static_cast<Out>(acc);
        }
  return out;
}

template <typename T, typename Acc, typename Out>
Tensor4<Out> backward_loops(const ConvLayerSpec& spec,
                            const Tensor4<T>& grad_out,
                            const Tensor4<T>& weight) {
  spec.validate();
  const auto [P, Q] = derive_output_shape(spec);
  require_shape(grad_out, spec.N, spec.K, P, Q, "conv_backward grad_out");
  require_shape(weight, spec.K, spec.C, spec.R, spec.S, "conv_backward weight");
  Tensor4<Acc> grad_in_acc(spec.N, spec.C, spec.H, spec.W);
  for (int n = 0; n < spec.N; ++n)
    for (int k = 0; k < spec.K; ++k)
      for (int c = 0; c < spec.C; ++c)
        for (int oj = 0; oj < P; ++oj)
          for (int oi = 0; oi < Q; ++oi) {
            const int ij = spec.stride * oj - spec.pad_h;
            const int ii = spec.stride * oi - spec.pad_w;
            for (int r = 0; r < spec.R; ++r)
              for (int s = 0; s < spec.S; ++s) {
                const int y = ij + r, x = ii + s;
                // contributions landing in the padding halo are discarded
                if (y < 0 || y >= spec.H || x < 0 || x >= spec.W) continue;
                grad_in_acc(n, c, y, x) +=
                    static_cast<Acc>(grad_out(n, k, oj, oi)) *
                    static_cast<Acc>(weight(k, c, r, s));
              }
          }
  Tensor4<Out> grad_in(spec.N, spec.C, spec.H, spec.W);
  for (int64_t i = 0; i < grad_in.size(); ++i)
    grad_in.data()[i] = static_cast<Out>(grad_in_acc.data()[i]);
  return grad_in;
}

template <typename T, typename Acc, typename Out>
Tensor4<Out> update_loops(const ConvLayerSpec& spec, const Tensor4<T>& input,
                          const Tensor4<T>& grad_out) {
  spec.validate();
  const auto [P, Q] = derive_output_shape(spec);
  require_shape(input, spec.N, spec.C, spec.H, spec.W, "conv_update input");
  require_shape(grad_out, spec.N, spec.K, P, Q, "conv_update grad_out");
  Tensor4<Acc> grad_w_acc(spec.K, spec.C, spec.R, spec.S);
  for (int n = 0; n < spec.N; ++n)
    for (int k = 0; k < spec.K; ++k)
      for (int c = 0; c < spec.C; ++c)
        for (int oj = 0; oj < P; ++oj)
          for (int oi = 0; oi < Q; ++oi) {
            const int ij = spec.stride * oj - spec.pad_h;
            const int ii = spec.stride * oi - spec.pad_w;
            for (int r = 0; r < spec.R; ++r)
              for (int s = 0; s < spec.S; ++s) {
                const int y = ij + r, x = ii + s;
                if (y < 0 || y >= spec.H || x < 0 || x >= spec.W) continue;
                grad_w_acc(k, c, r, s) +=
                    static_cast<Acc>(input(n, c, y, x)) *
                    static_cast<Acc>(grad_out(n, k, oj, oi));
              }
          }
  Tensor4<Out> grad_w(spec.K, spec.C, spec.R, spec.S);
  for (int64_t i = 0; i < grad_w.size(); ++i)
    grad_w.data()[i] = static_cast<Out>(grad_w_acc.data()[i]);
  return grad_w;
}

}  // namespace

TensorF conv_forward_naive(const ConvLayerSpec& spec, const TensorF& input,
                           const TensorF& weight) {
  return forward_loops<float, double, float>(spec, input, weight);
}

TensorD conv_forward_naive_f64(const ConvLayerSpec& spec, const TensorD& input,
                               const TensorD& weight) {
  return forward_loops<double, double, double>(spec, input, weight);
}

TensorF conv_backward_naive(const ConvLayerSpec& spec, const TensorF& grad_out,
                            const TensorF& weight) {
  return backward_loops<float, double, float>(spec, grad_out, weight);
}

TensorD conv_backward_naive_f64(const ConvLayerSpec& spec,
                                const TensorD& grad_out,
                                const TensorD& weight) {
  return backward_loops<double, double, double>(spec, grad_out, weight);
}

TensorF conv_update_naive(const ConvLayerSpec& spec, const TensorF& input,
                          const TensorF& grad_out) {
  return update_loops<float, double, float>(spec, input, grad_out);
}

TensorD conv_update_naive_f64(const ConvLayerSpec& spec, const TensorD& input,
                              const TensorD& grad_out) {
  return update_loops<double, double, double>(spec, input, grad_out);
}

TensorI64 int_conv_forward_oracle(const ConvLayerSpec& spec,
                                  const TensorI16& input,
                                  const TensorI16& weight) {
  return forward_loops<int16_t, int64_t, int64_t>(spec, input, weight);
}

Im2colBuffer build_im2col(const ConvLayerSpec& spec, const TensorF& input,
                          int image) {
  spec.validate();
  require_shape(input, spec.N, spec.C, spec.H, spec.W, "build_im2col input");
  const auto [P, Q] = derive_output_shape(spec);
  Im2colBuffer buf;
  buf.rows = static_cast<int64_t>(spec.C) * spec.R * spec.S;
  buf.cols = static_cast<int64_t>(P) * Q;
  buf.data.assign(static_cast<size_t>(buf.rows * buf.cols), 0.0f);
  for (int c = 0; c < spec.C; ++c)
    for (int r = 0; r < spec.R; ++r)
      for (int s = 0; s < spec.S; ++s) {
        const int64_t row = (static_cast<int64_t>(c) * spec.R + r) * spec.S + s;
        for (int oj = 0; oj < P; ++oj)
          for (int oi = 0; oi < Q; ++oi) {
            const int y = spec.stride * oj - spec.pad_h + r;
            const int x = spec.stride * oi - spec.pad_w + s;
            if (y < 0 || y >= spec.H || x < 0 || x >= spec.W) continue;
            buf.at(row, static_cast<int64_t>(oj) * Q + oi) =
                input(image, c, y, x);
          }
      }
  return buf;
}

TensorF conv_forward_im2col(const ConvLayerSpec& spec, const TensorF& input,
                            const TensorF& weight) {
  spec.validate();
  require_shape(input, spec.N, spec.C, spec.H, spec.W, "conv_im2col input");
  require_shape(weight, spec.K, spec.C, spec.R, spec.S, "conv_im2col weight");
  const auto [P, Q] = derive_output_shape(spec);
  const int64_t crs = static_cast<int64_t>(spec.C) * spec.R * spec.S;
  const int64_t pq = static_cast<int64_t>(P) * Q;
  TensorF out(spec.N, spec.K, P, Q);
  for (int n = 0; n < spec.N; ++n) {
    const Im2colBuffer buf = build_im2col(spec, input, n);
    // O_img(K x PQ) = W_mat(K x CRS) x buf(CRS x PQ); KCRS rows are already
    // the flattened receptive-field order
    float* out_img = out.data() + out.index(n, 0, 0, 0);
    for (int k = 0; k < spec.K; ++k) {
      float* orow = out_img + static_cast<int64_t>(k) * pq;
      const float* wrow = weight.data() + weight.index(k, 0, 0, 0);
      for (int64_t kk = 0; kk < crs; ++kk) {
        const float w = wrow[kk];
        const float* brow = buf.data.data() + kk * pq;
        for (int64_t j = 0; j < pq; ++j) orow[j] += w * brow[j];
      }
    }
  }
  return out;
}

int64_t count_forward_macs(const ConvLayerSpec& spec) {
  const auto [P, Q] = derive_output_shape(spec);
  int64_t macs = 0;
  for (int n = 0; n < spec.N; ++n)
    for (int k = 0; k < spec.K; ++k)
      for (int c = 0; c < spec.C; ++c)
        for (int oj = 0; oj < P; ++oj)
          for (int oi = 0; oi < Q; ++oi)
            for (int r = 0; r < spec.R; ++r)
              for (int s = 0; s < spec.S; ++s) macs += 1;
  return macs;
}

}  // namespace dconv
