#pragma once

#include <cstddef>
#include <functional>

namespace adapool {

/// Worker count: ADAPOOL_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/**
 * Runs f(0..n-1) on up to worker_count() threads. Each index must write only
 * its own outputs, so results do not depend on the number of workers. The
 * exception of the lowest failing index is rethrown.
 */
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f);

}  // namespace adapool
