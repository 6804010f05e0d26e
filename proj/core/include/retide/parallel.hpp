#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <future>
#include <mutex>
#include <thread>
#include <vector>

namespace retide {

std::size_t default_worker_count();

// Runs fn(i) for i in [0, count) across transient threads (atomic work
// stealing by index). Blocks until done; rethrows the first task exception.
// Safe to nest: every call owns its threads.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = 0);

// Fixed-size pool with a FIFO task queue, used by the server to spread tile
// work items across cores. Completion order is irrelevant to callers because
// results are index-addressed.
class WorkerPool {
public:
  explicit WorkerPool(std::size_t threads = 0);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t thread_count() const { return workers_.size(); }

  std::future<void> submit(std::function<void()> task);

private:
  void run();

  std::vector<std::thread> workers_;
  std::deque<std::packaged_task<void()>> queue_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
};

} // namespace retide
