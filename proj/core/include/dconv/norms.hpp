#pragma once

#include <cstdint>

#include "dconv/tensor.hpp"

namespace dconv {

struct ErrorNorms {
  double linf_abs = 0.0;
  double l2_abs = 0.0;
  double linf_rel = 0.0;
  double l2_rel = 0.0;

  bool within(double linf_rel_bound, double l2_rel_bound) const {
    return linf_rel <= linf_rel_bound && l2_rel <= l2_rel_bound;
  }
};

// linf_abs = max|a-b|, l2_abs = sqrt(sum (a-b)^2); relative variants divide
// by max|a| and sqrt(sum a^2). A zero reference norm makes the relative
// norm equal the absolute one.
ErrorNorms error_norms_span(const double* ref, const double* cand, int64_t n);

template <typename T, typename U>
ErrorNorms error_norms(const Tensor4<T>& ref, const Tensor4<U>& cand) {
  if (ref.dims() != cand.dims())
    throw ShapeMismatch("error_norms: tensor shapes differ");
  std::vector<double> a(ref.size()), b(ref.size());
  for (int64_t i = 0; i < ref.size(); ++i) {
    a[i] = static_cast<double>(ref.data()[i]);
    b[i] = static_cast<double>(cand.data()[i]);
  }
  return error_norms_span(a.data(), b.data(), ref.size());
}

}  // namespace dconv
