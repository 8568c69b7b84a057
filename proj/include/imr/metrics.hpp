#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace imr {

// One row of the per-iteration progress table; also emitted as a jsonl event
// and exportable as CSV.
struct IterationRow {
  int iteration = 0;
  double l1_delta = 0.0;
  double wall_ms = 0.0;
  uint64_t shuffle_bytes = 0;
  uint64_t propagated_kv = 0;   // state records emitted to the next iteration
  double p_delta = 0.0;         // changed-state fraction driving auto-off
  bool mrbg_enabled = false;
  uint64_t reduce_reexecuted = 0;
};

// Collects counters and structured events for one run. Counters aggregate
// in memory for programmatic access; events append to a jsonl file when a
// path is attached. Thread-safe.
class Metrics {
 public:
  Metrics() = default;
  explicit Metrics(const std::filesystem::path& jsonl_path);

  void attach(const std::filesystem::path& jsonl_path);

  void add(const std::string& counter, uint64_t delta);
  uint64_t counter(const std::string& name) const;

  void event(const std::string& name, nlohmann::json fields);

  void iteration(const IterationRow& row);
  const std::vector<IterationRow>& iterations() const { return iterations_; }
  void write_iterations_csv(const std::filesystem::path& path) const;

  nlohmann::json counters_json() const;

 private:
  mutable std::mutex mu_;
  std::filesystem::path jsonl_path_;
  std::map<std::string, uint64_t> counters_;
  std::vector<IterationRow> iterations_;
};

// Wall-clock helper for stage timing.
double now_ms();

}  // namespace imr
