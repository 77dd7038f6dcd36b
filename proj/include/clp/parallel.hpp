#pragma once

#include <cstddef>
#include <functional>

namespace clp {

// Worker count for internal parallelism. Reads CLP_THREADS once; defaults to
// the hardware concurrency, never less than 1.
std::size_t thread_count();

// Overrides the worker count for the rest of the process (0 restores the
// environment/hardware default).
void set_thread_count(std::size_t n);

// Runs body(begin, end) over a static partition of [0, n). Each index is
// visited exactly once; callers must keep per-index work independent so the
// result does not depend on the partition.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace clp
