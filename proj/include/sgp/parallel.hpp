#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sgp/errors.hpp"

namespace sgp {

/// Worker threads: SGP_THREADS if set, else the hardware count.
inline int thread_count() {
  if (const char* env = std::getenv("SGP_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SGP_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n). Work items must write only their own slots,
/// so results never depend on scheduling. The first exception is rethrown.
template <class Fn>
void parallel_for(int n, Fn&& fn, int threads = thread_count()) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Fixed shard count for gradient accumulation; independent of thread count
/// so the floating-point reduction order never changes.
inline constexpr int kGradientShards = 8;

}  // namespace sgp
