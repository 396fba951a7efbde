#pragma once

#include <cstdint>
#include <functional>

namespace tcprune {

// Number of worker threads for data-parallel kernels. Resolved once from the
// TCPRUNE_THREADS environment variable (default 1) and cached.
int thread_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Every output element is
// produced by exactly one chunk with a fixed inner loop order, so results are
// bit-identical for any thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace tcprune
