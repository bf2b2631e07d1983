#pragma once

#include <cstddef>
#include <functional>

namespace mvsde {

// Worker count: MLMC_MVSDE_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
[[nodiscard]] std::size_t worker_count();

// Runs body(i) for i in [0, n). Each index is executed exactly once; callers write
// results into index-addressed slots so the outcome is independent of scheduling.
// If several bodies throw, the exception of the lowest index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mvsde
