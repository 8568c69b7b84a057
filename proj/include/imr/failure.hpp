#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace imr {

// Thrown by a task when its injection point fires; the driver treats it
// like a task/worker death and runs recovery.
struct SimulatedFailure {
  std::string description;
};

enum class FailureKind { kPrimeMap, kPrimeReduce, kWorker };
enum class FailureTrigger { kStart, kMid };

struct FailureEvent {
  FailureKind kind = FailureKind::kPrimeMap;
  int iteration = 0;
  int partition = -1;  // task kinds
  int worker = -1;     // worker kind
  FailureTrigger trigger = FailureTrigger::kStart;
  bool consumed = false;
};

// Deterministic failure schedule. Each event fires exactly once; tasks poll
// should_fail at their injection points, the driver polls worker_failure at
// iteration starts.
class FailurePlan {
 public:
  FailurePlan() = default;

  static FailurePlan from_json(const nlohmann::json& j);
  static FailurePlan load(const std::filesystem::path& path);

  // True exactly once for a matching un-consumed event.
  bool should_fail(FailureKind kind, int iteration, int partition, FailureTrigger trigger);

  // Worker id scheduled to die at this iteration, if any (consumes it).
  std::optional<int> worker_failure(int iteration);

  size_t remaining() const;
  const std::vector<FailureEvent>& events() const { return events_; }

 private:
  // Behind a pointer so plans stay movable.
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  std::vector<FailureEvent> events_;
};

// Owns the partition → worker placement. A partition's map and reduce task
// always share a worker, so state never crosses workers between phases; on
// a worker death the pair moves together.
class TaskScheduler {
 public:
  TaskScheduler(int partitions, int workers);

  int worker_for(int partition) const;
  bool worker_failed(int worker) const;
  int healthy_workers() const;

  // Marks the worker dead and deterministically moves its partitions to the
  // healthy survivors. Throws kTaskFailed when none remain.
  void fail_worker(int worker);

  const std::vector<int>& assignment() const { return assignment_; }

 private:
  std::vector<int> assignment_;  // partition → worker
  std::vector<bool> failed_;
};

}  // namespace imr
