#pragma once

#include <functional>

namespace mirrorlab {

// Worker count: min(MIRRORLAB_THREADS, hardware concurrency), at least 1.
int worker_count();

// Runs fn(i) for i in [0, n) across worker threads. Results must be written
// to per-index slots; scheduling order is unspecified, so fn must not depend
// on execution order. Exceptions propagate to the caller.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace mirrorlab
