#pragma once

#include <cstddef>
#include <functional>

namespace handy {

// Worker count for parallel_for. Defaults to the HANDY_THREADS environment
// variable, else hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Calls fn(i) for i in [0, n). Exceptions are rethrown on the caller thread
// (the one from the lowest index wins, so failures are deterministic).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace handy
