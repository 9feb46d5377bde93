#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace nmem {

// Runs fn(begin, end) over a partition of [0, n) on `workers` threads.
// workers <= 1 (or tiny n) degenerates to a direct call on the caller's
// thread, which is the default everywhere: fits are single-core unless the
// user raises the thread count.
inline void parallel_chunks(std::size_t n, int workers,
                            const std::function<void(std::size_t, std::size_t, int)>& fn) {
  const int usable = std::max(1, workers);
  if (usable == 1 || n < 2) {
    fn(0, n, 0);
    return;
  }
  const auto k = static_cast<std::size_t>(std::min<std::size_t>(
      static_cast<std::size_t>(usable), n));
  std::vector<std::thread> threads;
  threads.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t lo = n * t / k, hi = n * (t + 1) / k;
    threads.emplace_back([&fn, lo, hi, t] { fn(lo, hi, static_cast<int>(t)); });
  }
  for (auto& th : threads) th.join();
}

}  // namespace nmem
