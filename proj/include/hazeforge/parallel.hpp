#pragma once

#include <cstddef>
#include <functional>

namespace hazeforge {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be independent;
// results are deterministic as long as fn writes only to slot i. Rethrows the first exception.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// HAZEFORGE_THREADS if set and positive, otherwise the hardware concurrency.
int default_thread_count();

}  // namespace hazeforge
