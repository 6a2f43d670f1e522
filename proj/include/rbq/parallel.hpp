#pragma once

#include <functional>

namespace rbq {

/// std::thread::hardware_concurrency(), at least 1.
int default_threads();

/// Calls fn(i) for i in [0, n) on up to `threads` workers (<= 0: default).
/// Work items are claimed dynamically; results must be written to per-index
/// slots so the outcome does not depend on scheduling. The exception thrown
/// by the lowest failing index is rethrown after all workers finish.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace rbq
