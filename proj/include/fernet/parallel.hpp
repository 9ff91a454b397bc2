#pragma once

#include <cstddef>
#include <functional>

namespace fernet {

// Process-wide degree of parallelism used by the numeric kernels. Defaults to
// 1. Kernels partition work so that every output element is produced by the
// same sequence of floating-point operations regardless of this setting.
void set_parallelism(int threads);
int parallelism();

// Reads FERNET_THREADS; returns `fallback` when unset or malformed.
int parallelism_from_env(int fallback = 1);

// Runs fn(begin, end) over [0, count) split into contiguous chunks, one per
// worker. Runs inline when parallelism is 1 or the range is smaller than
// `min_chunk`.
void parallel_for(std::size_t count, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace fernet
