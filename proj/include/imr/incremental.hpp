#pragma once

#include "imr/engine.hpp"

namespace imr {

struct IncrJobStats {
  uint64_t delta_map_invocations = 0;
  // Number of distinct reduce keys whose groups were re-processed, including
  // groups that emptied out and were retracted.
  uint64_t reduce_reexecuted_keys = 0;
  uint64_t reduce_invocations = 0;  // actual user reduce calls
  uint64_t result_retractions = 0;
  uint64_t tombstones_ignored = 0;
  uint64_t edges_replaced = 0;
  uint64_t accumulator_folds = 0;
  uint64_t shuffle_bytes = 0;
};

// Refreshes a base run in place from a signed delta: re-runs map only on
// delta records, merges the emitted edges and tombstones into the stored
// per-key chunks, re-reduces only the affected keys, and patches the result
// store and user output accordingly. An update travels as delete+insert of
// the same record position.
//
// With app.accumulator set the job takes the cheap path instead: delta
// values fold into the stored totals directly, deletes are rejected, and
// the edge graph is neither read nor written.
IncrJobStats run_incremental_job(const JobSpec& spec, const OneStepApp& app,
                                 const std::vector<std::filesystem::path>& delta_runs,
                                 const Workdir& wd, WorkerPool& pool, Metrics& metrics);

}  // namespace imr
