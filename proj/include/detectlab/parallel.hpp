#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "detectlab/error.hpp"

namespace detectlab {

// Worker cap from DETECTLAB_THREADS; defaults to 1.
inline std::size_t configured_threads() {
  const char* v = std::getenv("DETECTLAB_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw RangeError("DETECTLAB_THREADS must be a positive integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

// Runs fn(worker, job) for job in [0, jobs) on up to `threads` workers, pulling
// jobs from a shared counter. The first exception is rethrown after joining.
inline void parallel_for(std::size_t jobs, std::size_t threads,
                         const std::function<void(std::size_t worker, std::size_t job)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, jobs));
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs; ++j) fn(0, j);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t j; (j = next.fetch_add(1)) < jobs;) {
        try {
          fn(w, j);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = jobs;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detectlab
