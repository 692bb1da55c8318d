#pragma once

#include <cstddef>
#include <functional>

namespace crossrf {

/// Worker count: CROSSRF_THREADS if set to a positive integer, else hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Rethrows the first exception
/// (lowest index) after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace crossrf
