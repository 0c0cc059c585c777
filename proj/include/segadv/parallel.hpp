#pragma once

#include <cstddef>
#include <functional>

namespace segadv {

/// Worker count: SEGADV_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Indices are dealt round-robin to workers;
/// callers write results into per-index slots so reductions stay ordered.
/// The first exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace segadv
