#include "sentinel/core.hpp"

#include <atomic>
#include <thread>

namespace sentinel {

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  int workers = static_cast<int>(hw == 0 ? 1 : hw);
  if (workers > n) workers = n;
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace sentinel
