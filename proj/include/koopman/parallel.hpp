#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace koopman {

namespace detail {
inline int& thread_cap() {
  static int cap = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return cap;
}
}  // namespace detail

// Process-wide worker cap, settable from the CLI (--threads).
inline int max_threads() { return detail::thread_cap(); }
inline void set_max_threads(int n) { detail::thread_cap() = std::max(1, n); }

// Runs fn(i) for i in [0, n). Work items must write to disjoint slots; the
// caller does any floating-point reduction sequentially afterwards so results
// do not depend on the thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(max_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  std::atomic<int> cursor{0};
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int i = cursor.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace koopman
