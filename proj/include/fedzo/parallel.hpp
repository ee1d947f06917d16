#pragma once

#include <cstddef>
#include <functional>

namespace fedzo {

// Worker count: FEDZO_THREADS if set, else hardware concurrency.
std::size_t worker_count();

// Calls fn(i) for i in [0, count) across worker threads. Callers write
// results into slot i so the outcome never depends on the schedule. The
// exception of the lowest failing index is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace fedzo
