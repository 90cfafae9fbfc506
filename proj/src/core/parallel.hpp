#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace deid {

// Thread cap: DEID_THREADS when set, otherwise the hardware count.
inline int max_threads() {
  if (const char* env = std::getenv("DEID_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Index-parallel map over [0, n). Workers claim indices from a shared
// counter; results must go into preallocated per-index slots so the outcome
// is independent of scheduling.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  int threads = std::min<size_t>(max_threads(), n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace deid
