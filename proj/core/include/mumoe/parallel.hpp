#pragma once

#include <cstddef>
#include <functional>

namespace mumoe {

/// Worker cap: MUMOE_THREADS when set to a positive integer, otherwise the
/// hardware concurrency.
std::size_t thread_count();

/// Splits [0, n) into contiguous chunks run on up to thread_count()
/// threads. Each index is visited exactly once, so per-index results do
/// not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& body);

}  // namespace mumoe
