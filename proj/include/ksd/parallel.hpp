#pragma once

#include <cstddef>

namespace ksd {

/// Caps the number of worker threads used by grid sweeps (0 = runtime default).
void set_thread_count(int n);
int thread_count();

}  // namespace ksd
