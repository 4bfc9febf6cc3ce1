#pragma once

#include <cstddef>
#include <functional>

namespace mafaseg {

/// Process-wide worker count used by parallel_for. 1 (the default) runs every
/// loop inline on the calling thread.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs; any
/// reduction over them is left to the caller so results never depend on the
/// thread schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mafaseg
