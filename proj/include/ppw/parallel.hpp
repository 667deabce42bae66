#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ppw::parallel {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}
}  // namespace detail

/// Caps the number of worker threads used by grid-parallel loops.
inline void set_max_threads(int n) { detail::thread_cap().store(std::max(1, n)); }
inline int max_threads() { return detail::thread_cap().load(); }

/// Calls f(i) for i in [0, n). Work is split into contiguous blocks; f must
/// only write to storage owned by index i, so results do not depend on the
/// thread count.
template <class F>
void for_each_index(std::size_t n, F&& f) {
  const auto workers = static_cast<std::size_t>(max_threads());
  if (workers <= 1 || n < 2 * workers) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t block = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * block;
    const std::size_t hi = std::min(n, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace ppw::parallel
