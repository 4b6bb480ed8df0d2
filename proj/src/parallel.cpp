#include "gridforge/parallel.hpp"

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gridforge {

static int read_thread_count() {
#ifdef _OPENMP
    int n = omp_get_max_threads();
#else
    int n = 1;
#endif
    if (const char* env = std::getenv("GRIDFORGE_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1 && cap < n) n = static_cast<int>(cap);
    }
    return n < 1 ? 1 : n;
}

int thread_count() {
    static const int n = read_thread_count();
    return n;
}

} // namespace gridforge
