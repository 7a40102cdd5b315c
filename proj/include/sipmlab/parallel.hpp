#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace sipmlab {

/// Run fn(begin, end) over [0, n) split into contiguous chunks. Because every
/// stochastic routine derives its randomness from (seed, item index), results
/// do not depend on the number of jobs.
inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  const auto njobs = static_cast<std::size_t>(jobs);
  if (njobs <= 1 || n < 2 * njobs) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + njobs - 1) / njobs;
  for (std::size_t j = 0; j < njobs; ++j) {
    const std::size_t begin = j * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sipmlab
