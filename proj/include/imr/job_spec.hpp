#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "imr/common.hpp"

namespace imr {

enum class JobMode { kPlain, kIncr, kIter, kIncrIter };

const char* job_mode_name(JobMode m);
JobMode job_mode_from_name(const std::string& name);

// Everything a run needs beyond its input paths. Serialized into the run
// manifest so later delta jobs validate against the base run's settings.
struct JobSpec {
  std::string app;
  JobMode mode = JobMode::kPlain;
  int partitions = 4;  // reduce-side partition count n
  int workers = 4;
  uint64_t seed = 0;

  // Intermediate-state preservation. Plain and incremental runs keep it on;
  // tests may turn it off to exercise the bare engine.
  bool mrbg_enabled = true;
  uint64_t spill_budget_bytes = 64ull << 20;
  uint64_t read_cache_bytes = 1ull << 20;
  uint64_t gap_threshold_bytes = 100 * 1024;
  uint64_t append_buffer_bytes = 4ull << 20;

  // Iterative controls.
  double tol = 1e-9;        // L1 convergence threshold on state change
  int max_iters = 100;
  double filter_thresh = 0.0;  // change-accumulation threshold; <0 disables filtering
  bool cpc_enabled = false;
  double auto_off_threshold = 0.5;

  // Fault tolerance.
  bool checkpoints_enabled = false;
  int checkpoint_interval = 1;

  // App-specific knobs (damping factor, source vertex, cluster count, ...).
  nlohmann::json app_config = nlohmann::json::object();

  nlohmann::json to_json() const;
  static JobSpec from_json(const nlohmann::json& j);
};

}  // namespace imr
