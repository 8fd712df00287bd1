#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mcms {

// Worker cap from MCMS_THREADS (default 1).
inline std::size_t worker_count() {
  const char *env = std::getenv("MCMS_THREADS");
  if (!env || !*env)
    return 1;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  } catch (const std::exception &) {
    return 1;
  }
}

// Runs fn(i) for i in [0, n). Work items must be independent; callers reduce
// results in index order afterwards, so output never depends on the thread
// count.
template <class Fn> void parallel_for(std::size_t n, Fn &&fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += workers)
          fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto &th : pool)
    th.join();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

} // namespace mcms
