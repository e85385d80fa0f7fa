#pragma once

#include <cstddef>
#include <functional>

namespace hpl {

// Worker cap from HPL_NUM_THREADS (default 1, invalid values fall back to 1).
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
// independent; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace hpl
