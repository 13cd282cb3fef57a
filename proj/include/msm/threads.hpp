#ifndef MSM_THREADS_HPP
#define MSM_THREADS_HPP

#include <functional>
#include <thread>
#include <vector>

namespace msm {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(0..n-1); work item i goes to thread i % n_threads, results must be
// written to per-index slots so the outcome is scheduling-independent.
inline void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
  n_threads = std::min(resolve_threads(n_threads), n);
  if (n_threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  std::exception_ptr error = nullptr;
  std::mutex error_mu;
  for (int t = 0; t < n_threads; ++t)
    workers.emplace_back([&, t]() {
      try {
        for (int i = t; i < n; i += n_threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace msm

#endif
