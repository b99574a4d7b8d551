#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#include <omp.h>

namespace surf {

inline int resolve_threads(int threads) { return threads > 0 ? threads : omp_get_max_threads(); }

// Runs f(i) for i in [0, n) over OpenMP threads. Work items must write only
// to their own slots; an exception from the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(resolve_threads(threads))
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace surf
