#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace pqda {

// Serial execution is the reference path; parallel must match it bit for bit.
enum class Execution { serial, parallel };

/// Runs body(i) for i in [0, n). The parallel path uses OpenMP with a dynamic
/// schedule; the first exception thrown by any iteration is rethrown.
template <typename Body>
void for_each_index(Execution exec, std::size_t n, Body&& body) {
  if (exec == Execution::serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex guard;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    {
      std::lock_guard lock(guard);
      if (failure) continue;
    }
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(guard);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

} // namespace pqda
