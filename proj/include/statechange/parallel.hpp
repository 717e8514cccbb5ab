// SPDX-License-Identifier: Apache-2.0
//
// Index-parallel loop. Results are written to per-index slots by the caller,
// so reductions stay in a fixed order whatever the worker count.

#ifndef STATECHANGE_PARALLEL_HPP
#define STATECHANGE_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace statechange {

/// Worker cap from STATECHANGE_THREADS; 0 (or 1) runs inline on the caller.
/// Unset means hardware concurrency.
inline std::size_t configured_threads() {
  if (const char* env = std::getenv("STATECHANGE_THREADS")) {
    try {
      return static_cast<std::size_t>(std::stoul(env));
    } catch (...) {
      return 0;
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = configured_threads()) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = threads < n ? threads : n;
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            // Report the lowest failing index so errors are deterministic.
            if (i < err_index) {
              err_index = i;
              err = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace statechange

#endif  // STATECHANGE_PARALLEL_HPP
