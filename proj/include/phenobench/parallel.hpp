#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace phenobench::detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// Runs fn(task_index) for every index in [0, n_tasks). Tasks are claimed
// from a shared counter, so any thread may run any task; callers must make
// per-task results independent of the executing thread (e.g. write into a
// slot indexed by task) to stay bit-reproducible.
template <class Fn>
void parallel_tasks(std::size_t n_tasks, unsigned threads, Fn&& fn) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n_tasks <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = threads < n_tasks ? threads : static_cast<unsigned>(n_tasks);
  pool.reserve(n - 1);
  for (unsigned t = 0; t + 1 < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace phenobench::detail
