#pragma once

#include <cstddef>
#include <functional>

namespace geoadapt {

/// Worker count used by parallel_for. Defaults to GEOADAPT_THREADS, else the
/// hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Calls fn(i) for every i in [0, n). Work is split into contiguous static
/// blocks, so any per-index output slot is written by exactly one worker.
/// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace geoadapt
