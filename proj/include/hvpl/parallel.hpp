#pragma once

#include <functional>

namespace hvpl {

// Worker budget: HVPL_THREADS when set (clamped to >= 1), otherwise the
// hardware concurrency.
int thread_budget();

// Runs fn(0..n-1) across the thread budget. Each index writes only its own
// output slot, so results are identical for any thread count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace hvpl
