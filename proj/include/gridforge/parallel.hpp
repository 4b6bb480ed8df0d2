#pragma once

namespace gridforge {

/// Number of OpenMP threads the kernels may use. Reads GRIDFORGE_THREADS
/// once (caps the OpenMP default); always >= 1. Kernels pin their thread
/// count to this value and only use reductions whose result is independent
/// of the worker count, so outputs are bit-identical for any setting.
int thread_count();

} // namespace gridforge
