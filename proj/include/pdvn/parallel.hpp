#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace pdvn {

// Minimal persistent worker pool. Work is partitioned into fixed-size chunks
// that do not depend on the worker count, so any floating-point accumulation
// done per chunk and merged in chunk order is bit-identical for 1..N workers.
class ThreadPool {
 public:
  explicit ThreadPool(int workers) { start(workers); }
  ~ThreadPool() { stop(); }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int workers() const { return static_cast<int>(threads_.size()) + 1; }

  // Runs fn(task_index) for task_index in [0, n_tasks), on the pool plus the
  // calling thread. Blocks until all tasks complete. fn must not throw.
  void run_tasks(int n_tasks, const std::function<void(int)>& fn) {
    if (n_tasks <= 0) return;
    if (threads_.empty() || n_tasks == 1) {
      for (int i = 0; i < n_tasks; ++i) fn(i);
      return;
    }
    std::unique_lock lk(mu_);
    job_ = &fn;
    next_task_.store(0, std::memory_order_relaxed);
    total_tasks_ = n_tasks;
    pending_ = n_tasks;
    ++generation_;
    cv_.notify_all();
    lk.unlock();

    work_loop(fn, n_tasks);

    lk.lock();
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void start(int workers) {
    int extra = workers - 1;
    for (int i = 0; i < extra; ++i) {
      threads_.emplace_back([this] { worker_main(); });
    }
  }

  void stop() {
    {
      std::lock_guard lk(mu_);
      stopping_ = true;
      cv_.notify_all();
    }
    for (auto& t : threads_) t.join();
  }

  void worker_main() {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* job = nullptr;
      int total = 0;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || generation_ != seen; });
        if (stopping_) return;
        seen = generation_;
        job = job_;
        total = total_tasks_;
      }
      if (job != nullptr) work_loop(*job, total);
    }
  }

  void work_loop(const std::function<void(int)>& fn, int total) {
    for (;;) {
      int idx = next_task_.fetch_add(1, std::memory_order_relaxed);
      if (idx >= total) break;
      fn(idx);
      std::lock_guard lk(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  std::atomic<int> next_task_{0};
  int total_tasks_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stopping_ = false;
};

// Chunked parallel loop: splits [0, n) into chunks of chunk_size and runs
// body(begin, end, chunk_index) per chunk. Chunk layout is independent of the
// pool size.
inline void parallel_chunks(ThreadPool* pool, int64_t n, int64_t chunk_size,
                            const std::function<void(int64_t, int64_t, int)>& body) {
  if (n <= 0) return;
  int n_chunks = static_cast<int>((n + chunk_size - 1) / chunk_size);
  auto task = [&](int c) {
    int64_t b = static_cast<int64_t>(c) * chunk_size;
    int64_t e = std::min(n, b + chunk_size);
    body(b, e, c);
  };
  if (pool == nullptr || n_chunks == 1) {
    for (int c = 0; c < n_chunks; ++c) task(c);
  } else {
    pool->run_tasks(n_chunks, task);
  }
}

}  // namespace pdvn
