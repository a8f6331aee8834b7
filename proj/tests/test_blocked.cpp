#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dconv/blocked.hpp"
#include "dconv/util.hpp"

using namespace dconv;

namespace {

TensorF sequential_tensor(int64_t d0, int64_t d1, int64_t d2, int64_t d3) {
  TensorF t(d0, d1, d2, d3);
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<float>(i % 1000) * 0.25f - 100.0f;
  return t;
}

}  // namespace

TEST_CASE("single element lands in lane 0, tail lanes zero") {
  TensorF t(1, 1, 1, 1);
  t(0, 0, 0, 0) = 3.5f;
  const auto blk = to_blocked_activation(t, 16, 0, 0);
  CHECK(blk.data.size() == 16);
  CHECK(blk.data[0] == 3.5f);
  for (int v = 1; v < 16; ++v) CHECK(blk.data[v] == 0.0f);
}

TEST_CASE("channel index arithmetic matches the blocked layout") {
  const int C = 32, vlen = 16;
  TensorF t(1, C, 2, 2);
  for (int c = 0; c < C; ++c) t(0, c, 1, 0) = static_cast<float>(c) + 0.5f;
  const auto blk = to_blocked_activation(t, vlen, 0, 0);
  CHECK(blk.cb() == 2);
  for (int c = 0; c < C; ++c) {
    // element c lands at block c/vlen, lane c%vlen
    CHECK(blk.at(0, c / vlen, 1, 0)[c % vlen] ==
          static_cast<float>(c) + 0.5f);
  }
  CHECK(blk.at(0, 1, 1, 0)[1] == 17.5f);  // c = 17: block 1, lane 1
}

TEST_CASE("activation round trip over channel tails and vlens") {
  Rng rng(7);
  for (int vlen : {8, 16})
    for (int C : {1, 3, 15, 16, 17, 64}) {
      CAPTURE(vlen);
      CAPTURE(C);
      TensorF t(2, C, 3, 5);
      for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_f32();
      const auto blk = to_blocked_activation(t, vlen, 1, 2);
      CHECK(from_blocked_activation(blk) == t);
      // tail lanes stay zero
      const int tail = C % vlen;
      if (tail != 0)
        for (int n = 0; n < 2; ++n)
          for (int y = 0; y < blk.hp(); ++y)
            for (int x = 0; x < blk.wp(); ++x)
              for (int v = tail; v < vlen; ++v)
                CHECK(blk.at(n, blk.cb() - 1, y, x)[v] == 0.0f);
    }
}

TEST_CASE("halo is zero and never leaks into the canonical tensor") {
  const TensorF t = sequential_tensor(1, 4, 3, 3);
  auto blk = to_blocked_activation(t, 4, 2, 1);
  for (int y = 0; y < blk.hp(); ++y)
    for (int x = 0; x < blk.wp(); ++x) {
      const bool interior =
          y >= 2 && y < 2 + 3 && x >= 1 && x < 1 + 3;
      if (interior) continue;
      for (int v = 0; v < 4; ++v) CHECK(blk.at(0, 0, y, x)[v] == 0.0f);
    }
  // scribble on the halo; the canonical view must not see it
  blk.at(0, 0, 0, 0)[0] = 99.0f;
  blk.at(0, 0, blk.hp() - 1, blk.wp() - 1)[3] = -99.0f;
  CHECK(from_blocked_activation(blk) == t);
  blk.zero_halo();
  CHECK(blk.at(0, 0, 0, 0)[0] == 0.0f);
}

TEST_CASE("weight round trip and zero lanes") {
  SUBCASE("K=C=vlen is an identity relabeling") {
    const TensorF w = sequential_tensor(16, 16, 1, 1);
    const auto blk = to_blocked_weight(w, 16);
    CHECK(blk.kb() == 1);
    CHECK(blk.cb() == 1);
    for (int k = 0; k < 16; ++k)
      for (int c = 0; c < 16; ++c)
        CHECK(blk.at(0, 0, 0, 0)[c * 16 + k] == w(k, c, 0, 0));
    CHECK(from_blocked_weight(blk) == w);
  }

  SUBCASE("K=64, C=3 pads 13 zero lanes per channel block") {
    const TensorF w = sequential_tensor(64, 3, 3, 3);
    const auto blk = to_blocked_weight(w, 16);
    CHECK(blk.kb() == 4);
    CHECK(blk.cb() == 1);
    for (int kb = 0; kb < 4; ++kb)
      for (int r = 0; r < 3; ++r)
        for (int s = 0; s < 3; ++s)
          for (int c = 3; c < 16; ++c)
            for (int k = 0; k < 16; ++k)
              CHECK(blk.at(kb, 0, r, s)[c * 16 + k] == 0.0f);
    CHECK(from_blocked_weight(blk) == w);
  }

  SUBCASE("round trip across shapes") {
    Rng rng(11);
    for (int vlen : {8, 16})
      for (int K : {1, 3, 15, 16, 17, 64}) {
        TensorF w(K, 5, 3, 3);
        for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.next_f32();
        CHECK(from_blocked_weight(to_blocked_weight(w, vlen)) == w);
      }
  }
}

TEST_CASE("shape mismatch is rejected") {
  const ConvLayerSpec spec = make_layer_spec(2, 8, 8, 4, 4, 3, 3, 1, 8);
  TensorF bad(2, 8, 4, 5);
  CHECK_THROWS_AS(to_blocked_activation(bad, spec), ShapeMismatch);
  TensorF bad_w(8, 8, 3, 1);
  CHECK_THROWS_AS(to_blocked_weight(bad_w, spec), ShapeMismatch);
}
