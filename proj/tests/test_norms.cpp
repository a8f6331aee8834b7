#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dconv/norms.hpp"

using namespace dconv;

TEST_CASE("identical tensors give all-zero norms") {
  TensorF a(1, 1, 2, 2);
  a(0, 0, 0, 0) = 1.5f;
  a(0, 0, 1, 1) = -2.0f;
  const ErrorNorms n = error_norms(a, a);
  CHECK(n.linf_abs == 0.0);
  CHECK(n.l2_abs == 0.0);
  CHECK(n.linf_rel == 0.0);
  CHECK(n.l2_rel == 0.0);
}

TEST_CASE("hand-computed example: ref=[3,4], cand=[3,4.4]") {
  TensorF ref(1, 1, 1, 2), cand(1, 1, 1, 2);
  ref(0, 0, 0, 0) = 3.0f;
  ref(0, 0, 0, 1) = 4.0f;
  cand(0, 0, 0, 0) = 3.0f;
  cand(0, 0, 0, 1) = 4.4f;
  const ErrorNorms n = error_norms(ref, cand);
  CHECK(n.linf_abs == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(n.l2_abs == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(n.linf_rel == doctest::Approx(0.1).epsilon(1e-6));   // 0.4 / 4
  CHECK(n.l2_rel == doctest::Approx(0.08).epsilon(1e-6));    // 0.4 / 5
}

TEST_CASE("zero reference: relative norms fall back to absolute") {
  TensorF ref(1, 1, 1, 1), cand(1, 1, 1, 1);
  cand(0, 0, 0, 0) = 1.0f;
  const ErrorNorms n = error_norms(ref, cand);
  CHECK(n.linf_rel == 1.0);
  CHECK(n.l2_rel == 1.0);
}

TEST_CASE("nonzero iff tensors differ") {
  TensorF a(1, 1, 1, 3), b(1, 1, 1, 3);
  a(0, 0, 0, 0) = 1.0f;
  b(0, 0, 0, 0) = 1.0f;
  b(0, 0, 0, 2) = 1e-30f;
  const ErrorNorms n = error_norms(a, b);
  CHECK(n.linf_abs > 0.0);
}

TEST_CASE("shape mismatch throws") {
  TensorF a(1, 1, 1, 2), b(1, 1, 2, 1);
  CHECK_THROWS_AS(error_norms(a, b), ShapeMismatch);
}
