#include "gruvar/parallel.hpp"

namespace gruvar {

namespace {

int default_threads() {
#ifdef _OPENMP
    int n = omp_get_max_threads();
    return n > 0 ? n : 1;
#else
    return 1;
#endif
}

int g_max_threads = default_threads();

}  // namespace

int max_threads() { return g_max_threads; }

void set_max_threads(int n) { g_max_threads = n < 1 ? 1 : n; }

}  // namespace gruvar
