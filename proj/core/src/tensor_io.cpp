#include "dconv/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace dconv {

namespace {
constexpr char kMagic[4] = {'C', 'F', 'T', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void write_cft_raw(std::ostream& os, uint32_t dtype, const int64_t dims[4],
                   const void* payload, size_t bytes) {
  os.write(kMagic, 4);
  put_u32(os, dtype);
  for (int i = 0; i < 4; ++i) put_u64(os, static_cast<uint64_t>(dims[i]));
  os.write(static_cast<const char*>(payload),
           static_cast<std::streamsize>(bytes));
  if (!os) throw Error("CFT1: write failed");
}

uint32_t read_cft_header(std::istream& is, int64_t dims[4]) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw Error("CFT1: bad magic");
  const uint32_t code = get_u32(is);
  for (int i = 0; i < 4; ++i) dims[i] = static_cast<int64_t>(get_u64(is));
  if (!is) throw Error("CFT1: truncated header");
  return code;
}

template <typename T>
void write_cft_file(const std::string& path, const Tensor4<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for write: " + path);
  write_cft(os, t);
}

template <typename T>
Tensor4<T> read_cft_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for read: " + path);
  return read_cft<T>(is);
}

template void write_cft_file<float>(const std::string&, const Tensor4<float>&);
template void write_cft_file<double>(const std::string&, const Tensor4<double>&);
template void write_cft_file<int16_t>(const std::string&, const Tensor4<int16_t>&);
template void write_cft_file<int32_t>(const std::string&, const Tensor4<int32_t>&);
template void write_cft_file<int64_t>(const std::string&, const Tensor4<int64_t>&);
template Tensor4<float> read_cft_file<float>(const std::string&);
template Tensor4<double> read_cft_file<double>(const std::string&);
template Tensor4<int16_t> read_cft_file<int16_t>(const std::string&);
template Tensor4<int32_t> read_cft_file<int32_t>(const std::string&);
template Tensor4<int64_t> read_cft_file<int64_t>(const std::string&);

}  // namespace dconv
