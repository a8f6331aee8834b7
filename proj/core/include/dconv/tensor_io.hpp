#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "dconv/tensor.hpp"

namespace dconv {

// Binary canonical tensor file: little-endian, header {magic "CFT1",
// u32 dtype code, 4 x u64 dims}, then the row-major payload.
// dtype codes: 1 = f32, 2 = i16, 3 = i32, 4 = f64, 5 = i64.
template <typename T>
struct cft_dtype_code;
template <> struct cft_dtype_code<float>   { static constexpr uint32_t value = 1; };
template <> struct cft_dtype_code<int16_t> { static constexpr uint32_t value = 2; };
template <> struct cft_dtype_code<int32_t> { static constexpr uint32_t value = 3; };
template <> struct cft_dtype_code<double>  { static constexpr uint32_t value = 4; };
template <> struct cft_dtype_code<int64_t> { static constexpr uint32_t value = 5; };

void write_cft_raw(std::ostream& os, uint32_t dtype, const int64_t dims[4],
                   const void* payload, size_t bytes);
uint32_t read_cft_header(std::istream& is, int64_t dims[4]);

template <typename T>
void write_cft(std::ostream& os, const Tensor4<T>& t) {
  write_cft_raw(os, cft_dtype_code<T>::value, t.dims().data(), t.data(),
                static_cast<size_t>(t.size()) * sizeof(T));
}

template <typename T>
Tensor4<T> read_cft(std::istream& is) {
  int64_t dims[4];
  const uint32_t code = read_cft_header(is, dims);
  if (code != cft_dtype_code<T>::value)
    throw ShapeMismatch("CFT1: dtype code " + std::to_string(code) +
                        " does not match requested element type");
  Tensor4<T> t(dims[0], dims[1], dims[2], dims[3]);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!is) throw Error("CFT1: truncated payload");
  return t;
}

template <typename T>
void write_cft_file(const std::string& path, const Tensor4<T>& t);
template <typename T>
Tensor4<T> read_cft_file(const std::string& path);

}  // namespace dconv
