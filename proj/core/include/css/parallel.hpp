#pragma once

#include <cstddef>
#include <functional>

namespace css {

/// Worker cap: min(CSS_THREADS, hardware_concurrency), at least 1.
std::size_t thread_cap();

/// Runs fn(i) for i in [0, count) on up to thread_cap() workers. Work items
/// must be independent; results should be slotted by index so the outcome is
/// order-independent.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace css
