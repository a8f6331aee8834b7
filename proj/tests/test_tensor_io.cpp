#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "dconv/tensor_io.hpp"
#include "dconv/util.hpp"

using namespace dconv;

TEST_CASE("CFT1 round trip f32") {
  Rng rng(3);
  TensorF t(2, 3, 4, 5);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_f32();
  std::stringstream ss;
  write_cft(ss, t);
  CHECK(read_cft<float>(ss) == t);
}

TEST_CASE("CFT1 round trip i16 and i32") {
  TensorI16 t16(1, 2, 2, 2);
  for (int64_t i = 0; i < t16.size(); ++i)
    t16.data()[i] = static_cast<int16_t>(i * 7 - 50);
  std::stringstream ss;
  write_cft(ss, t16);
  CHECK(read_cft<int16_t>(ss) == t16);

  TensorI32 t32(1, 1, 3, 1);
  t32(0, 0, 2, 0) = -123456;
  std::stringstream ss2;
  write_cft(ss2, t32);
  CHECK(read_cft<int32_t>(ss2) == t32);
}

TEST_CASE("header layout is stable") {
  TensorF t(1, 2, 3, 4);
  std::stringstream ss;
  write_cft(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 4 + 32 + 24 * 4);
  CHECK(bytes.substr(0, 4) == "CFT1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // f32 dtype code
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);  // dim0, little-endian
  CHECK(static_cast<unsigned char>(bytes[16]) == 2);
  CHECK(static_cast<unsigned char>(bytes[24]) == 3);
  CHECK(static_cast<unsigned char>(bytes[32]) == 4);
}

TEST_CASE("bad magic and dtype mismatch are rejected") {
  std::stringstream ss("XXXXjunkjunkjunk");
  CHECK_THROWS_AS(read_cft<float>(ss), Error);

  TensorF t(1, 1, 1, 1);
  std::stringstream ss2;
  write_cft(ss2, t);
  CHECK_THROWS_AS(read_cft<int32_t>(ss2), ShapeMismatch);
}

TEST_CASE("truncated payload is rejected") {
  TensorF t(1, 1, 2, 2);
  std::stringstream ss;
  write_cft(ss, t);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 4);
  std::stringstream truncated(bytes);
  CHECK_THROWS_AS(read_cft<float>(truncated), Error);
}
