#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mct {

// Kernel parallelism cap. MCT_THREADS=1 forces serial execution; unset falls
// back to the hardware count. Each output element is always computed in full
// by exactly one thread, so results are bit-identical for any thread count.
inline int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("MCT_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<int>(std::min<long>(v, 256));
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

namespace detail {
inline thread_local bool in_parallel_worker = false;
}

// Splits [0, n) into contiguous chunks, one worker per chunk. Loops whose
// total scalar work is below the threshold run serially: thread startup costs
// more than it saves there, and small-kernel callers (gradient checks) are
// far more frequent than large ones. Nested calls from inside a worker also
// run serially.
template <typename Fn>
void parallel_for(int64_t n, int64_t work_per_item, Fn&& fn) {
  constexpr int64_t kMinParallelWork = 1 << 20;
  const int threads = max_threads();
  if (threads <= 1 || detail::in_parallel_worker || n < 2 ||
      n * work_per_item < kMinParallelWork) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(threads, n));
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      detail::in_parallel_worker = true;
      for (int64_t i = lo; i < hi; ++i) fn(i);
      detail::in_parallel_worker = false;
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mct
