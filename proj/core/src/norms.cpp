#include "dconv/norms.hpp"

#include <cmath>

namespace dconv {

ErrorNorms error_norms_span(const double* ref, const double* cand, int64_t n) {
  double max_diff = 0.0, max_ref = 0.0;
  double sq_diff = 0.0, sq_ref = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = std::fabs(ref[i] - cand[i]);
    const double a = std::fabs(ref[i]);
    if (d > max_diff) max_diff = d;
    if (a > max_ref) max_ref = a;
    sq_diff += d * d;
    sq_ref += ref[i] * ref[i];
  }
  ErrorNorms norms;
  norms.linf_abs = max_diff;
  norms.l2_abs = std::sqrt(sq_diff);
  norms.linf_rel = max_ref > 0.0 ? max_diff / max_ref : max_diff;
  const double ref_l2 = std::sqrt(sq_ref);
  norms.l2_rel = ref_l2 > 0.0 ? norms.l2_abs / ref_l2 : norms.l2_abs;
  return norms;
}

}  // namespace dconv
