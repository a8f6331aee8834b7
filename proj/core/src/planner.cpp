#include "dconv/planner.hpp"

#include <algorithm>
#include <limits>

namespace dconv {

namespace {

std::vector<int> divisors_desc(int n) {
  std::vector<int> divs;
  for (int d = n; d >= 1; --d)
    if (n % d == 0) divs.push_back(d);
  return divs;
}

}  // namespace

LoopOrder choose_loop_order(const ConvLayerSpec& spec) {
  LoopOrder order;
  if (spec.R == 1 && spec.S == 1) {
    order.symbols = {LoopSym::N, LoopSym::KB, LoopSym::OJB, LoopSym::OIB,
                     LoopSym::CB};
    order.pull_in_cb = true;
  }
  return order;
}

ThreadPartition partition_work(const std::array<int64_t, 4>& dims,
                               int threads) {
  ThreadPartition part;
  part.threads = threads;
  part.dims = dims;
  const int64_t total = part.total();
  part.items.resize(threads);
  for (int t = 0; t < threads; ++t) {
    const Range r = split_range(total, threads, t);
    if (!r.empty()) part.items[t].push_back(r);
  }
  return part;
}

ThreadPartition partition_threads(const ConvLayerSpec& spec, int threads,
                                  const EngineConfig& cfg) {
  spec.validate();
  if (threads < 1) throw InvalidLayerSpec("thread count must be >= 1");
  const auto [P, Q] = derive_output_shape(spec);
  const RegisterBlocking rb = select_register_blocking(spec, cfg);
  const int64_t pb = ceil_div(P, rb.primary.rb_p);
  const int64_t qb = ceil_div(Q, rb.primary.rb_q);
  return partition_work({spec.N, spec.kb(), pb, qb}, threads);
}

std::optional<TaskSplit> find_task_split(const ConvLayerSpec& spec,
                                         int group_threads) {
  const int rs = spec.R * spec.S;
  const int kb = spec.kb();
  const int cb = spec.cb();
  for (int t_rs : divisors_desc(group_threads)) {
    if (t_rs > rs) continue;
    const int rest = group_threads / t_rs;
    for (int t_k : divisors_desc(rest)) {
      if (t_k > kb) continue;
      const int t_c = rest / t_k;
      if (t_c <= cb) return TaskSplit{t_rs, t_k, t_c};
    }
  }
  return std::nullopt;
}

WeightUpdateStrategy make_update_strategy(const ConvLayerSpec& spec,
                                          int threads, int copies) {
  if (threads < 1 || copies < 1 || threads % copies != 0)
    throw InfeasibleStrategy("copies must divide the thread count");
  WeightUpdateStrategy s;
  s.threads = threads;
  s.copies = copies;
  s.mode = copies == 1 ? UpdateMode::TASK_PARALLEL
           : copies == threads ? UpdateMode::COPY_REDUCE
                               : UpdateMode::HYBRID;
  s.split = find_task_split(spec, threads / copies)
                .value_or(TaskSplit{1, 1, 1});
  return s;
}

int64_t update_bytes_model(const ConvLayerSpec& spec, int threads,
                           const WeightUpdateStrategy& strategy,
                           int element_bytes) {
  const auto [P, Q] = derive_output_shape(spec);
  const int64_t in_elems =
      static_cast<int64_t>(spec.N) * spec.C * spec.H * spec.W;
  const int64_t grad_elems = static_cast<int64_t>(spec.N) * spec.K * P * Q;
  const int64_t wt_elems =
      static_cast<int64_t>(spec.R) * spec.S * spec.C * spec.K;

  const int g = strategy.copies;
  const int64_t tg = threads / g;
  const TaskSplit& sp = strategy.split;
  const int64_t input_term = in_elems * tg / sp.t_c;
  const int64_t grad_term = grad_elems * tg / sp.t_k;
  // a single accumulator is written once; G copies are written, re-read for
  // the reduction, and the final dW written once
  const int64_t copy_factor = g == 1 ? 1 : 2 * static_cast<int64_t>(g) + 1;
  return (input_term + grad_term + copy_factor * wt_elems) * element_bytes;
}

WeightUpdateStrategy choose_update_strategy(const ConvLayerSpec& spec,
                                            int threads,
                                            const EngineConfig&) {
  spec.validate();
  if (threads < 1) throw InfeasibleStrategy("thread count must be >= 1");
  const int64_t tasks =
      static_cast<int64_t>(spec.R) * spec.S * spec.kb() * spec.cb();

  std::optional<WeightUpdateStrategy> best;
  int64_t best_bytes = std::numeric_limits<int64_t>::max();
  for (int g : divisors_desc(threads)) {
    const int tg = threads / g;
    if (g > spec.N) continue;           // one minibatch shard per copy
    if (tasks < tg) continue;           // enough tasks inside each group
    const auto split = find_task_split(spec, tg);
    if (!split) continue;
    WeightUpdateStrategy cand = make_update_strategy(spec, threads, g);
    const int64_t bytes = update_bytes_model(spec, threads, cand);
    // ties break toward fewer copies; g iterates descending so >= keeps
    // the smaller g
    if (bytes <= best_bytes) {
      best_bytes = bytes;
      best = cand;
    }
  }
  if (best) return *best;

  // nothing reaches T-way parallelism; fall back to the most parallel
  // feasible copy count
  int g = 1;
  for (int d : divisors_desc(threads))
    if (d <= spec.N) {
      g = d;
      break;
    }
  return make_update_strategy(spec, threads, g);
}

int64_t spatial_footprint_elems(const ConvLayerSpec& spec, int b_p, int b_q) {
  const int64_t in_rows = static_cast<int64_t>(b_p - 1) * spec.stride + spec.R;
  const int64_t in_cols = static_cast<int64_t>(b_q - 1) * spec.stride + spec.S;
  return in_rows * in_cols * spec.vlen +
         static_cast<int64_t>(b_p) * b_q * spec.vlen +
         static_cast<int64_t>(spec.vlen) * spec.vlen;
}

std::pair<int, int> choose_spatial_blocking(const ConvLayerSpec& spec,
                                            const EngineConfig& cfg) {
  const auto [P, Q] = derive_output_shape(spec);
  const int64_t budget_elems = cfg.cache_budget_bytes / 4;
  int best_p = 1, best_q = 1;
  int64_t best_area = 0;
  for (int bp = 1; bp <= P; ++bp) {
    if (P % bp != 0) continue;
    for (int bq = 1; bq <= Q; ++bq) {
      if (Q % bq != 0) continue;
      if (spatial_footprint_elems(spec, bp, bq) > budget_elems) continue;
      const int64_t area = static_cast<int64_t>(bp) * bq;
      if (area > best_area || (area == best_area && bq > best_q)) {
        best_area = area;
        best_p = bp;
        best_q = bq;
      }
    }
  }
  return {best_p, best_q};
}

}  // namespace dconv
