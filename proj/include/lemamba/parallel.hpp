#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace lemamba {

/// Worker count taken from LEMAMBA_THREADS (default 1).
inline int worker_count() {
  static const int count = [] {
    const char* env = std::getenv("LEMAMBA_THREADS");
    if (env == nullptr) return 1;
    const int n = std::atoi(env);
    return std::clamp(n, 1, 256);
  }();
  return count;
}

/// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs.
/// Work is split into contiguous chunks so results never depend on scheduling.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int workers = static_cast<int>(std::min<std::int64_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        for (std::int64_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace lemamba
