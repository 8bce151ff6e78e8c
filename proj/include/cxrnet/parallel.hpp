#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace cxr {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> value{0};
  return value;
}
}  // namespace detail

/// Worker count used by kernels; 0 means hardware concurrency.
inline void set_num_threads(unsigned n) { detail::thread_setting() = n; }

inline unsigned num_threads() {
  unsigned n = detail::thread_setting();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs fn(begin, end) over disjoint contiguous chunks of [0, count).
/// Each index is visited by exactly one call, so per-index results do not
/// depend on the number of workers.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t min_chunk, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(num_threads(), min_chunk == 0 ? count : count / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    if (count > 0) fn(std::size_t{0}, count);
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(count, chunk));
}

}  // namespace cxr
