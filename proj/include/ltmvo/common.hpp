#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ltmvo {

/// Number of worker threads to use, honoring the LTMVO_THREADS env var.
inline int worker_threads() {
  static const int n = [] {
    unsigned hw = std::thread::hardware_concurrency();
    int threads = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("LTMVO_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) threads = static_cast<int>(v);
    }
    return threads;
  }();
  return n;
}

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so every
/// invocation order inside a chunk is fixed; results are bitwise independent
/// of the thread count as long as fn only writes to index-owned state.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  const int threads = worker_threads();
  if (n <= 0) return;
  if (threads <= 1 || n < 64) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int used = static_cast<int>(std::min<int64_t>(threads, n));
  const int64_t chunk = (n + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(used);
  for (int t = 0; t < used; ++t) {
    const int64_t lo = t * chunk;
    const int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw std::invalid_argument(msg);
}

}  // namespace ltmvo
