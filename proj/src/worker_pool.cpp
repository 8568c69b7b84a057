#include "imr/worker_pool.hpp"

#include <atomic>

#include "imr/common.hpp"

namespace imr {

WorkerPool::WorkerPool(int workers) {
  if (workers < 1) throw_error(ErrorCode::kConfig, "worker count must be >= 1");
  workers_.reserve(workers);
  for (int i = 0; i < workers; i++) {
    auto w = std::make_unique<Worker>();
    w->thread = std::thread([this, wp = w.get()] { worker_loop(wp); });
    workers_.push_back(std::move(w));
  }
}

WorkerPool::~WorkerPool() {
  for (auto& w : workers_) {
    {
      std::lock_guard<std::mutex> lock(w->mu);
      w->stop = true;
    }
    w->cv.notify_all();
  }
  for (auto& w : workers_) {
    if (w->thread.joinable()) w->thread.join();
  }
}

void WorkerPool::worker_loop(Worker* w) {
  for (;;) {
    std::function<void()> task;
    {
      std::unique_lock<std::mutex> lock(w->mu);
      w->cv.wait(lock, [w] { return w->stop || !w->queue.empty(); });
      if (w->queue.empty()) {
        if (w->stop) return;
        continue;
      }
      task = std::move(w->queue.front());
      w->queue.pop_front();
    }
    task();
  }
}

std::vector<std::exception_ptr> WorkerPool::run_phase(
    const std::vector<int>& worker_of, const std::vector<std::function<void()>>& tasks) {
  if (worker_of.size() != tasks.size()) {
    throw_error(ErrorCode::kContractViolation, "run_phase: worker list size mismatch");
  }
  size_t n = tasks.size();
  std::vector<std::exception_ptr> errors(n);
  std::atomic<size_t> remaining(n);
  std::mutex done_mu;
  std::condition_variable done_cv;

  for (size_t i = 0; i < n; i++) {
    int wid = worker_of[i];
    if (wid < 0 || wid >= size()) {
      throw_error(ErrorCode::kContractViolation,
                  "run_phase: worker id out of range: " + std::to_string(wid));
    }
    Worker* w = workers_[wid].get();
    auto wrapped = [&, i, task = tasks[i]] {
      try {
        task();
      } catch (...) {
        errors[i] = std::current_exception();
      }
      if (remaining.fetch_sub(1) == 1) {
        std::lock_guard<std::mutex> lock(done_mu);
        done_cv.notify_all();
      }
    };
    {
      std::lock_guard<std::mutex> lock(w->mu);
      w->queue.push_back(std::move(wrapped));
    }
    w->cv.notify_one();
  }

  std::unique_lock<std::mutex> lock(done_mu);
  done_cv.wait(lock, [&] { return remaining.load() == 0; });
  return errors;
}

}  // namespace imr
