#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xnudge {

/// Resolve a thread-count request: 0 (or negative) means "all available".
inline int resolve_threads(int requested) {
#ifdef _OPENMP
    if (requested <= 0) return omp_get_max_threads();
    return requested;
#else
    (void)requested;
    return 1;
#endif
}

/// Serial reference loop. Kept as its own entry point so tests and the
/// benchmark can compare it against the OpenMP path.
template <class F>
void serial_for(size_t count, F&& fn) {
    for (size_t i = 0; i < count; ++i) fn(i);
}

/// Run fn(i) for i in [0, count). With threads > 1 the iterations execute
/// under OpenMP. Each iteration must only write state owned by index i;
/// under that contract the result is identical for any thread count.
template <class F>
void parallel_for(size_t count, int threads, F&& fn) {
#ifdef _OPENMP
    if (resolve_threads(threads) > 1 && count > 1) {
        const long long c = static_cast<long long>(count);
#pragma omp parallel for num_threads(resolve_threads(threads)) schedule(dynamic)
        for (long long i = 0; i < c; ++i) fn(static_cast<size_t>(i));
        return;
    }
#endif
    serial_for(count, fn);
}

} // namespace xnudge
