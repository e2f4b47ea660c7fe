#pragma once

#include <cstddef>
#include <functional>

namespace wm::core {

/// Worker count from WM_WORKERS, else the hardware concurrency (at least 1).
std::size_t default_worker_count();

/// Runs fn(task, worker) for task in [0, n). Tasks are statically striped
/// across workers, so which tasks run is independent of scheduling; callers
/// write results into per-task slots to keep outputs independent of the
/// worker count. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace wm::core
