#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace synthctl {

// Process-wide worker cap. 0 means "use hardware concurrency".
void set_thread_count(int threads);
int thread_count();

namespace detail {
inline thread_local bool in_parallel_region = false;
}

// Runs body(i) for i in [0, n). Work items must write only to their own
// output slots; results are then independent of scheduling. The first
// exception thrown by any item is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::int64_t n, Body&& body) {
  // Nested loops run serially inside the outer loop's workers.
  const int workers = detail::in_parallel_region
                          ? 1
                          : static_cast<int>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    const bool outer = detail::in_parallel_region;
    detail::in_parallel_region = true;
    struct Restore {
      bool value;
      ~Restore() { detail::in_parallel_region = value; }
    } restore{outer};
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace synthctl
