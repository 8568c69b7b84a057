#include "imr/failure.hpp"

#include <fstream>

#include "imr/common.hpp"

namespace imr {

namespace {

FailureKind kind_from_name(const std::string& s) {
  if (s == "PRIME_MAP") return FailureKind::kPrimeMap;
  if (s == "PRIME_REDUCE") return FailureKind::kPrimeReduce;
  if (s == "WORKER") return FailureKind::kWorker;
  throw_error(ErrorCode::kConfig, "unknown failure kind: " + s);
}

FailureTrigger trigger_from_name(const std::string& s) {
  if (s == "START") return FailureTrigger::kStart;
  if (s == "MID") return FailureTrigger::kMid;
  throw_error(ErrorCode::kConfig, "unknown failure trigger: " + s);
}

}  // namespace

FailurePlan FailurePlan::from_json(const nlohmann::json& j) {
  FailurePlan plan;
  for (const auto& e : j.at("failures")) {
    FailureEvent ev;
    ev.kind = kind_from_name(e.at("kind").get<std::string>());
    ev.iteration = e.at("iteration").get<int>();
    ev.trigger = trigger_from_name(e.value("trigger", "START"));
    if (ev.kind == FailureKind::kWorker) {
      ev.worker = e.at("worker").get<int>();
      if (ev.trigger != FailureTrigger::kStart) {
        throw_error(ErrorCode::kConfig, "worker failures fire at iteration start");
      }
    } else {
      ev.partition = e.at("partition").get<int>();
    }
    plan.events_.push_back(ev);
  }
  return plan;
}

FailurePlan FailurePlan::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorCode::kNotFound, "failure plan missing: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorCode::kConfig, "bad failure plan " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

bool FailurePlan::should_fail(FailureKind kind, int iteration, int partition,
                              FailureTrigger trigger) {
  std::lock_guard<std::mutex> lock(*mu_);
  for (auto& e : events_) {
    if (e.consumed || e.kind != kind || e.iteration != iteration || e.trigger != trigger) {
      continue;
    }
    if (e.partition != partition) continue;
    e.consumed = true;
    return true;
  }
  return false;
}

std::optional<int> FailurePlan::worker_failure(int iteration) {
  std::lock_guard<std::mutex> lock(*mu_);
  for (auto& e : events_) {
    if (e.consumed || e.kind != FailureKind::kWorker || e.iteration != iteration) continue;
    e.consumed = true;
    return e.worker;
  }
  return std::nullopt;
}

size_t FailurePlan::remaining() const {
  std::lock_guard<std::mutex> lock(*mu_);
  size_t n = 0;
  for (const auto& e : events_) {
    if (!e.consumed) n++;
  }
  return n;
}

TaskScheduler::TaskScheduler(int partitions, int workers) : failed_(workers, false) {
  if (partitions < 1 || workers < 1) {
    throw_error(ErrorCode::kConfig, "scheduler needs >=1 partition and worker");
  }
  assignment_.resize(partitions);
  for (int p = 0; p < partitions; p++) assignment_[p] = p % workers;
}

int TaskScheduler::worker_for(int partition) const { return assignment_.at(partition); }

bool TaskScheduler::worker_failed(int worker) const { return failed_.at(worker); }

int TaskScheduler::healthy_workers() const {
  int n = 0;
  for (bool f : failed_) {
    if (!f) n++;
  }
  return n;
}

void TaskScheduler::fail_worker(int worker) {
  failed_.at(worker) = true;
  std::vector<int> healthy;
  for (size_t w = 0; w < failed_.size(); w++) {
    if (!failed_[w]) healthy.push_back(static_cast<int>(w));
  }
  if (healthy.empty()) {
    throw_error(ErrorCode::kTaskFailed, "no healthy workers left");
  }
  // Deterministic round-robin over the survivors, in partition order.
  size_t next = 0;
  for (size_t p = 0; p < assignment_.size(); p++) {
    if (assignment_[p] == worker) {
      assignment_[p] = healthy[next % healthy.size()];
      next++;
    }
  }
}

}  // namespace imr
