#pragma once

#include <cstdint>
#include <functional>

namespace flowrec {

// Global worker cap. Set from --threads / GT_THREADS before any kernels run.
// Forward kernels write disjoint outputs per index, so results are identical
// for any thread count; gradient scatters privatize per-chunk buffers and
// merge them in chunk order.
int thread_count();
void set_thread_count(int n);

/// Runs fn(begin, end) over a partition of [0, n) on up to thread_count()
/// threads. Chunk boundaries depend only on n and the thread count.
void parallel_chunks(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace flowrec
