#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gruvar {

// Global worker-thread cap. 1 means fully serial execution. Parallel code
// paths must produce bit-identical results for every thread count; anything
// order-sensitive (gradient sums, loss sums) is reduced in index order after
// the parallel section.
int max_threads();
void set_max_threads(int n);

// Runs fn(i) for i in [0, n). Uses OpenMP when available and the thread cap
// allows it; falls back to a plain loop otherwise. fn must only write to
// per-index state.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#ifdef _OPENMP
    const int threads = max_threads();
    if (threads > 1 && n > 1 && !omp_in_parallel()) {
#pragma omp parallel for schedule(static) num_threads(threads)
        for (long long i = 0; i < static_cast<long long>(n); ++i) {
            fn(static_cast<std::size_t>(i));
        }
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) {
        fn(i);
    }
}

}  // namespace gruvar
