#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dconv/errors.hpp"

namespace dconv {

// Dense row-major 4D tensor. Canonical activation order is NCHW,
// canonical weight order is KCRS, canonical output order is NKPQ.
template <typename T>
class Tensor4 {
 public:
  Tensor4() : dims_{0, 0, 0, 0} {}
  Tensor4(int64_t d0, int64_t d1, int64_t d2, int64_t d3)
      : dims_{d0, d1, d2, d3},
        data_(static_cast<size_t>(d0 * d1 * d2 * d3), T{}) {}

  static Tensor4 zeros(int64_t d0, int64_t d1, int64_t d2, int64_t d3) {
    return Tensor4(d0, d1, d2, d3);
  }

  T& operator()(int64_t a, int64_t b, int64_t c, int64_t d) {
    return data_[index(a, b, c, d)];
  }
  const T& operator()(int64_t a, int64_t b, int64_t c, int64_t d) const {
    return data_[index(a, b, c, d)];
  }

  int64_t index(int64_t a, int64_t b, int64_t c, int64_t d) const {
    return ((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
  }

  const std::array<int64_t, 4>& dims() const { return dims_; }
  int64_t dim(int i) const { return dims_[i]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool same_shape(const Tensor4& other) const { return dims_ == other.dims_; }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(dims_[0], dims_[1], dims_[2], dims_[3]);
    for (int64_t i = 0; i < size(); ++i)
      out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor4&) const = default;

 private:
  std::array<int64_t, 4> dims_;
  std::vector<T> data_;
};

using TensorF = Tensor4<float>;
using TensorD = Tensor4<double>;
using TensorI16 = Tensor4<int16_t>;
using TensorI32 = Tensor4<int32_t>;
using TensorI64 = Tensor4<int64_t>;

template <typename T>
void require_shape(const Tensor4<T>& t, int64_t d0, int64_t d1, int64_t d2,
                   int64_t d3, const char* what) {
  if (t.dim(0) != d0 || t.dim(1) != d1 || t.dim(2) != d2 || t.dim(3) != d3)
    throw ShapeMismatch(std::string(what) + ": expected [" +
                        std::to_string(d0) + "," + std::to_string(d1) + "," +
                        std::to_string(d2) + "," + std::to_string(d3) +
                        "], got [" + std::to_string(t.dim(0)) + "," +
                        std::to_string(t.dim(1)) + "," +
                        std::to_string(t.dim(2)) + "," +
                        std::to_string(t.dim(3)) + "]");
}

}  // namespace dconv
