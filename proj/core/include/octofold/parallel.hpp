// Deterministic batch/channel parallelism. Work is split into contiguous
// chunks that touch disjoint output elements, so results are bit-identical
// for any thread count.
#pragma once

#include <cstdint>
#include <functional>

namespace octofold {

/// Worker threads used by tensor loops. Defaults to the hardware count
/// (capped at 8) and honors the OCTOFOLD_THREADS environment variable.
int worker_threads();
void set_worker_threads(int n);

/// Runs body(begin, end) over a partition of [0, n). Serial when n is small
/// or one worker is configured.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace octofold
