#pragma once

#include <cstdint>
#include <functional>

namespace sonetlab {

// Number of worker threads: hardware concurrency, capped by the
// SONETLAB_THREADS environment variable when set.
int worker_count();

// Runs fn(i) for i in [0, n). Work items must be independent; each item
// writes only to its own output slot, so results are identical for any
// worker count. Exceptions from items are rethrown on the calling thread.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace sonetlab
