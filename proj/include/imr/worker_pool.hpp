#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace imr {

// Fixed set of worker threads, each with its own task queue, so a task runs
// on the specific worker the scheduler assigned it to. run_phase is a
// barrier: it returns once every submitted task finished, reporting per-task
// exceptions instead of throwing so the caller can drive recovery.
class WorkerPool {
 public:
  explicit WorkerPool(int workers);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()); }

  // tasks[i] runs on worker worker_of[i]. Result slot i holds nullptr on
  // success or the task's exception.
  std::vector<std::exception_ptr> run_phase(const std::vector<int>& worker_of,
                                            const std::vector<std::function<void()>>& tasks);

 private:
  struct Worker {
    std::thread thread;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::function<void()>> queue;
    bool stop = false;
  };

  void worker_loop(Worker* w);

  std::vector<std::unique_ptr<Worker>> workers_;
};

}  // namespace imr
