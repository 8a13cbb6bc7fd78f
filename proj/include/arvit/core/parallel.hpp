#pragma once

#include <cstddef>
#include <functional>

namespace arvit {

// Worker count for intra-op parallel loops. Ops only split work over
// independent output slices and reduce partials in a fixed order, so results
// are bitwise identical for every worker count.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Runs fn(i) for i in [0, n), partitioned into contiguous chunks.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace arvit
