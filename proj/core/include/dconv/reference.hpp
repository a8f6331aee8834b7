#pragma once

#include "dconv/layer_spec.hpp"
#include "dconv/tensor.hpp"

namespace dconv {

// Slow, obviously-correct reference passes. All three walk the seven loops
// directly, accumulate in a wider type than their inputs (f64 for f32, i64
// for i16), and apply logical zero padding by bounds checks. Ground truth
// for every engine test.

// O[n][k][oj][oi] += I[n][c][ij+r][ii+s] * W[k][c][r][s]
TensorF conv_forward_naive(const ConvLayerSpec& spec, const TensorF& input,
                           const TensorF& weight);
TensorD conv_forward_naive_f64(const ConvLayerSpec& spec, const TensorD& input,
                               const TensorD& weight);

// dI[n][c][ij+r][ii+s] += dO[n][k][oj][oi] * W[k][c][r][s]
TensorF conv_backward_naive(const ConvLayerSpec& spec, const TensorF& grad_out,
                            const TensorF& weight);
TensorD conv_backward_naive_f64(const ConvLayerSpec& spec,
                                const TensorD& grad_out,
                                const TensorD& weight);

// dW[k][c][r][s] += I[n][c][ij+r][ii+s] * dO[n][k][oj][oi]
TensorF conv_update_naive(const ConvLayerSpec& spec, const TensorF& input,
                          const TensorF& grad_out);
TensorD conv_update_naive_f64(const ConvLayerSpec& spec, const TensorD& input,
                              const TensorD& grad_out);

// exact widening integer forward; never overflows for any Table I layer
TensorI64 int_conv_forward_oracle(const ConvLayerSpec& spec,
                                  const TensorI16& input,
                                  const TensorI16& weight);

// Matrix of flattened receptive fields: row (c*R + r)*S + s, column
// oj*Q + oi; zeros where the field exits the padded input.
struct Im2colBuffer {
  int64_t rows = 0;  // C*R*S
  int64_t cols = 0;  // P*Q
  std::vector<float> data;

  float& at(int64_t row, int64_t col) { return data[row * cols + col]; }
  float at(int64_t row, int64_t col) const { return data[row * cols + col]; }
};

Im2colBuffer build_im2col(const ConvLayerSpec& spec, const TensorF& input,
                          int image);

// O = reshape(W_matrix x Im2colBuffer) per image, plain triple-loop GEMM
TensorF conv_forward_im2col(const ConvLayerSpec& spec, const TensorF& input,
                            const TensorF& weight);

// multiply-accumulate count of the naive forward loops (one per loop-nest
// iteration, padding positions included); flops = 2 * this
int64_t count_forward_macs(const ConvLayerSpec& spec);

}  // namespace dconv
