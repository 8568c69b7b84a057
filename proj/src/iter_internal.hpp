#pragma once

// Internals shared between the full and delta iterative drivers.

#include <filesystem>
#include <functional>
#include <vector>

#include "imr/checkpoint.hpp"
#include "imr/iterative.hpp"
#include "imr/metrics.hpp"
#include "imr/mrbg_store.hpp"

namespace imr::internal {

namespace fs = std::filesystem;

struct IterContext {
  const JobSpec& spec;
  const IterativeApp& app;
  const Workdir& wd;
  WorkerPool& pool;
  Metrics& metrics;
  FailurePlan* failures = nullptr;
  TaskScheduler sched;
  uint64_t failures_recovered = 0;
  int last_checkpoint = -1;

  IterContext(const JobSpec& s, const IterativeApp& a, const Workdir& w, WorkerPool& p,
              Metrics& m, FailurePlan* f)
      : spec(s), app(a), wd(w), pool(p), metrics(m), failures(f),
        sched(s.partitions, p.size()) {}

  StoreOptions store_options() const {
    StoreOptions so;
    so.gap_threshold_bytes = spec.gap_threshold_bytes;
    so.read_cache_bytes = spec.read_cache_bytes;
    so.append_buffer_bytes = spec.append_buffer_bytes;
    return so;
  }
};

// Runs task(p, attempt) for every partition on its assigned worker. An
// injected failure restores that partition from the newest checkpoint and
// re-runs the task on the same worker (map and reduce stay co-located, so
// "the worker holding the dependent task" is the worker it already had).
// Real errors propagate.
void run_partition_phase(IterContext& ctx, int iteration, FailureKind kind,
                         const std::function<void(int p, int attempt)>& task);

// Handles a scheduled worker death at the start of an iteration: marks it
// failed, moves its partitions (map+reduce together) to survivors, and
// rolls those partitions back to the newest checkpoint.
// Handles any worker deaths scheduled for this iteration. With checkpoints
// on, rolls every partition back to the newest durable checkpoint and
// returns the iteration to resume from; otherwise returns `iteration`.
int handle_worker_failure(IterContext& ctx, int iteration);

// Writes a checkpoint if enabled and due at this iteration.
void maybe_checkpoint(IterContext& ctx, int iteration);

// One full (non-delta) iteration over every structure record: map+join,
// shuffle, reduce, state rewrite. Returns the summed state movement.
struct FullIterationResult {
  double l1 = 0.0;
  uint64_t state_records = 0;
  uint64_t shuffle_bytes = 0;
  uint64_t reduce_groups = 0;
};
FullIterationResult run_full_iteration(IterContext& ctx, int iteration);

// The map half of a full iteration, reusable for graph rebuilds. For each
// partition: join structure with state, run app.map per record, emit
// contribution edges (plus identity edges carrying each state value in
// co-partitioned mode) into per-destination sorted spills.
struct MapPhaseOut {
  // [source partition][destination partition] -> spill runs
  std::vector<std::vector<std::vector<fs::path>>> spills;
  uint64_t shuffle_bytes = 0;
  uint64_t invocations = 0;
};
MapPhaseOut run_full_map_phase(IterContext& ctx, int iteration, bool inject_failures);

// Collects every spill destined for partition p across sources.
std::vector<fs::path> spills_for(const MapPhaseOut& out, int p);

// Replicated-mode post-reduce: assemble partials into the new global state
// value, write a copy to every partition, return the state movement.
double assemble_replicated_state(IterContext& ctx, uint64_t* propagated);

// Export final state as the user-facing output runs.
void export_state_output(IterContext& ctx);

inline bool is_identity(const MRBGEdge& e) { return e.mk.partition == kIdentityPartition; }
inline bool is_identity(const StoredEdge& e) { return e.mk.partition == kIdentityPartition; }

}  // namespace imr::internal
