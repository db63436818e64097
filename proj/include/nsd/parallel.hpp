#pragma once

#include <cstddef>
#include <functional>

namespace nsd {

// Worker count: `requested` if nonzero, else NESTED_SINKHORN_THREADS, else
// all hardware threads.
unsigned resolve_threads(unsigned requested);

// Runs body(k) for k in [0, count). Each index is handled by exactly one
// worker; the first exception thrown by any body is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, unsigned threads);

}  // namespace nsd
