#pragma once

// Deterministic fan-out over independent tasks. Results are stored by task
// index, so aggregation order never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace homlab {

/// Process-wide worker cap (the CLI's --threads flag). 0 or 1 means serial.
inline std::size_t& thread_cap() {
  static std::size_t cap = 1;
  return cap;
}

/// out[i] = f(i) for i in [0, n), evaluated on up to thread_cap() workers.
/// The first exception thrown by any task is rethrown after all workers join.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, F&& f) {
  std::vector<T> out(n);
  const std::size_t workers = std::min(n, std::max<std::size_t>(1, thread_cap()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        out[i] = f(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  pool.clear();
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace homlab
