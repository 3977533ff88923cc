#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mmcaps {

// Process-wide worker pool. Kernels split work into index chunks; every
// output element is written by exactly one chunk, so results do not depend
// on the thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Number of lanes used by parallel_for. Must be called before first use
  // if a value other than 1 is wanted; later calls adjust the pool.
  void set_threads(int n) {
    std::lock_guard<std::mutex> lk(config_mutex_);
    if (n < 1) n = 1;
    threads_ = n;
    while (static_cast<int>(workers_.size()) < n - 1) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  int threads() const { return threads_; }

  // Runs fn(begin, end) over a partition of [0, n). Blocks until done.
  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int lanes = threads_;
    if (lanes > n) lanes = static_cast<int>(n);
    if (lanes <= 1) {
      fn(0, n);
      return;
    }
    std::vector<std::pair<int64_t, int64_t>> chunks;
    chunks.reserve(lanes);
    int64_t base = n / lanes, rem = n % lanes, pos = 0;
    for (int c = 0; c < lanes; ++c) {
      int64_t len = base + (c < rem ? 1 : 0);
      chunks.emplace_back(pos, pos + len);
      pos += len;
    }
    std::atomic<int> pending(lanes - 1);
    {
      std::lock_guard<std::mutex> lk(queue_mutex_);
      for (int c = 1; c < lanes; ++c) {
        auto [b, e] = chunks[c];
        tasks_.push_back([&fn, b, e, &pending] {
          fn(b, e);
          pending.fetch_sub(1, std::memory_order_acq_rel);
        });
      }
    }
    queue_cv_.notify_all();
    fn(chunks[0].first, chunks[0].second);
    while (pending.load(std::memory_order_acquire) > 0) {
      std::this_thread::yield();
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(queue_mutex_);
      stop_ = true;
    }
    queue_cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

 private:
  ThreadPool() = default;

  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(queue_mutex_);
        queue_cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      task();
    }
  }

  std::mutex config_mutex_;
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::vector<std::function<void()>> tasks_;
  std::vector<std::thread> workers_;
  bool stop_ = false;
  int threads_ = 1;
};

inline void set_threads(int n) { ThreadPool::instance().set_threads(n); }
inline int thread_count() { return ThreadPool::instance().threads(); }

// Static partition of [0, n); fn receives (begin, end).
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().run(n, fn);
}

}  // namespace mmcaps
