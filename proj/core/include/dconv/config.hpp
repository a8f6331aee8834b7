#pragma once

#include <cstdint>

namespace dconv {

// Tunables shared by the blocking selector, planner and kernel builders.
// min/max_accumulators bound the register tile: the product RB_P*RB_Q must
// cover the FMA latency without exhausting the vector register file.
struct EngineConfig {
  int min_accumulators = 8;
  int max_accumulators = 28;
  int64_t cache_budget_bytes = 512 * 1024;  // per-thread, spatial blocking
  int prefetch_lookahead = 1;               // kernel-calls ahead
  bool prefetch_enabled = true;
  bool streaming_stores = false;
  int acc_chain_limit = 512;  // max int16 products per 32-bit accumulator
  int i16_bound_in = 256;     // declared magnitude bounds for overflow certs
  int i16_bound_wt = 256;
};

}  // namespace dconv
