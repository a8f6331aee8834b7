#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <new>
#include <thread>
#include <vector>

namespace dconv {

constexpr int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// 64-byte aligned allocator so vlen=16 f32 lanes sit on one cache line
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    void* p = ::operator new[](n * sizeof(T), std::align_val_t(alignment));
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete[](p, std::align_val_t(alignment));
  }
  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const { return true; }
};

template <typename T>
using aligned_vector = std::vector<T, AlignedAlloc<T>>;

// splitmix64: portable seeded generator for benchmark data
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [-0.5, 0.5]
  float next_f32() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f) - 0.5f;
  }

  double next_f64() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0) - 0.5;
  }

  // uniform integer in [lo, hi]
  int32_t next_int(int32_t lo, int32_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int32_t>(next_u64() % span);
  }

  int16_t next_i16(int32_t lo, int32_t hi) {
    return static_cast<int16_t>(next_int(lo, hi));
  }
};

inline void prefetch_read(const void* p) {
#if defined(__GNUC__) || defined(__clang__)
  __builtin_prefetch(p, 0, 3);
#else
  (void)p;
#endif
}

inline void prefetch_write(const void* p) {
#if defined(__GNUC__) || defined(__clang__)
  __builtin_prefetch(p, 1, 3);
#else
  (void)p;
#endif
}

// Runs fn(tid) on nthreads workers and joins them all (the per-layer barrier).
// tid 0 runs on the calling thread.
inline void parallel_run(int nthreads, const std::function<void(int)>& fn) {
  if (nthreads <= 1) {
    fn(0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(fn, t);
  fn(0);
  for (auto& th : pool) th.join();
}

// Even split of [0, total) into nparts contiguous ranges, imbalance <= 1.
struct Range {
  int64_t begin = 0;
  int64_t end = 0;
  int64_t size() const { return end - begin; }
  bool empty() const { return begin >= end; }
  bool operator==(const Range&) const = default;
};

inline Range split_range(int64_t total, int nparts, int part) {
  const int64_t base = total / nparts;
  const int64_t rem = total % nparts;
  const int64_t begin = part * base + std::min<int64_t>(part, rem);
  return {begin, begin + base + (part < rem ? 1 : 0)};
}

}  // namespace dconv
