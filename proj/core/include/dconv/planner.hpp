#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dconv/config.hpp"
#include "dconv/layer_spec.hpp"
#include "dconv/microkernel.hpp"
#include "dconv/util.hpp"

namespace dconv {

enum class LoopSym { N, KB, CB, OJB, OIB };

struct LoopOrder {
  std::array<LoopSym, 5> symbols{LoopSym::N, LoopSym::KB, LoopSym::CB,
                                 LoopSym::OJB, LoopSym::OIB};
  bool pull_in_cb = false;

  bool operator==(const LoopOrder&) const = default;
};

// 1x1 layers get c_b pulled inside the spatial loops so the output tile
// stays register/cache resident across all C_b partial products; larger
// filters already reuse the output tile within one kernel call.
LoopOrder choose_loop_order(const ConvLayerSpec& spec);

// Per-thread contiguous ranges over the flattened (n, k_b, ojb, oib) space.
// The hierarchy falls out of the flattening: whole images first, then
// output blocks, then spatial tiles.
struct ThreadPartition {
  int threads = 1;
  std::array<int64_t, 4> dims{1, 1, 1, 1};  // N, K_b, P_b, Q_b
  std::vector<std::vector<Range>> items;

  int64_t total() const {
    return dims[0] * dims[1] * dims[2] * dims[3];
  }
};

ThreadPartition partition_work(const std::array<int64_t, 4>& dims,
                               int threads);
ThreadPartition partition_threads(const ConvLayerSpec& spec, int threads,
                                  const EngineConfig& cfg = {});

enum class UpdateMode { TASK_PARALLEL, COPY_REDUCE, HYBRID };

// exact split T_g = t_rs * t_k * t_c with t_rs <= R*S, t_k <= K_b,
// t_c <= C_b, preferring the (r, s) domain first
struct TaskSplit {
  int t_rs = 1;
  int t_k = 1;
  int t_c = 1;

  bool operator==(const TaskSplit&) const = default;
};

std::optional<TaskSplit> find_task_split(const ConvLayerSpec& spec,
                                         int group_threads);

// G = 1 is task-parallel into the single dW; G = T gives every thread a
// private gradient copy over a minibatch shard; hybrids use G copies each
// shared by T/G threads.
struct WeightUpdateStrategy {
  UpdateMode mode = UpdateMode::TASK_PARALLEL;
  int copies = 1;  // G
  int threads = 1;
  TaskSplit split;  // within-group split, feeds the bytes model

  int group_threads() const { return threads / copies; }
};

WeightUpdateStrategy make_update_strategy(const ConvLayerSpec& spec,
                                          int threads, int copies);

// Estimated tensor traffic in bytes: the task-parallel route re-reads the
// input (T_g/t_c)x and the output gradient (T_g/t_k)x; G > 1 copies cost
// (2G+1) passes over the weight gradient for accumulate + reduce.
int64_t update_bytes_model(const ConvLayerSpec& spec, int threads,
                           const WeightUpdateStrategy& strategy,
                           int element_bytes = 4);

// argmin of the bytes model over G in divisors(T), restricted to feasible
// strategies (N >= G and enough tasks per group); ties toward fewer copies
WeightUpdateStrategy choose_update_strategy(const ConvLayerSpec& spec,
                                            int threads,
                                            const EngineConfig& cfg = {});

// Largest (B_P, B_Q) dividing (P, Q) whose per-invocation footprint
// (input patch + gradient tile + one weight block) fits the cache budget.
std::pair<int, int> choose_spatial_blocking(const ConvLayerSpec& spec,
                                            const EngineConfig& cfg = {});

int64_t spatial_footprint_elems(const ConvLayerSpec& spec, int b_p, int b_q);

}  // namespace dconv
