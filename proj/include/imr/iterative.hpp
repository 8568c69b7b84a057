#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "imr/engine.hpp"
#include "imr/failure.hpp"

namespace imr {

// Iterative jobs split their input into loop-invariant structure records
// (sk → sv) and loop-variant state records (dk → dv). project names the
// state key each structure record depends on; the runtime joins the two,
// runs map per structure record, reduces per state key, and repeats until
// the state stops moving.
enum class ProjectKind { kOne2One, kMany2One, kAll2One };

struct IterativeApp {
  ProjectKind project_kind = ProjectKind::kOne2One;

  // Small-state mode: structure partitions by its own key and every
  // partition holds a full state copy instead of co-partitioning. No
  // identity contributions flow; reduce sees prior="" and the driver
  // rebuilds the state via assemble().
  bool replicated_state = false;

  std::function<std::string(const std::string& sk)> project;

  // One structure record joined with the state value it depends on.
  std::function<void(const std::string& sk, const std::string& sv, const std::string& dk,
                     const std::string& dv, const MapEmit& emit)>
      map;

  // Initial value for a state key that has no stored record yet.
  std::function<std::string(const std::string& dk)> init;

  // New state value for dk from its prior value and the contributions that
  // reached it (invocation order). prior is "" in replicated mode.
  std::function<std::string(const std::string& dk, const std::string& prior,
                            const std::vector<std::string>& values)>
      reduce;

  // Replicated mode only: fold this iteration's reduce outputs into the
  // single global state value.
  std::function<std::string(const std::string& prior_state, const std::vector<KvRecord>& outputs)>
      assemble;

  // Distance between two state values; drives convergence and change
  // filtering.
  std::function<double(const std::string& a, const std::string& b)> difference;
};

// --- on-disk record codecs -------------------------------------------------

// structure.run: key = project(sk) so records sort by the state key they
// feed; payload keeps the original record and its pinned invocation id.
struct StructureRecord {
  std::string pk;  // project(sk)
  std::string sk;
  std::string sv;
  MapKey mk;
};

std::string encode_structure_value(const StructureRecord& r);
StructureRecord decode_structure_value(const std::string& pk, const std::string& value);

// delta_state.run: one changed state key with its new and previous visible
// values — the input feeding the next delta iteration.
struct DeltaStateRecord {
  std::string dk;
  std::string dv_new;
  std::string dv_prev;
};

std::string encode_delta_state_value(const DeltaStateRecord& r);
DeltaStateRecord decode_delta_state_value(const std::string& dk, const std::string& value);

// cpc.run: per-key accumulated unemitted change and the last computed value.
struct CpcEntry {
  std::string dk;
  double accumulated = 0.0;
  std::string last_computed;
};

std::string encode_cpc_value(const CpcEntry& e);
CpcEntry decode_cpc_value(const std::string& dk, const std::string& value);

// MapKey partition space for structure records inserted by delta jobs:
// 0x40000000 + structure partition, disjoint from input-run indices and the
// identity partition.
inline constexpr uint32_t kInsertPartitionBase = 0x40000000u;

// --- data placement --------------------------------------------------------

// Splits raw structure/state inputs into per-partition sorted runs:
// structure by hash(project(sk)), state by hash(dk) — or, replicated mode,
// structure by hash(sk) with the full state copied to every partition.
// Fills manifest->next_seq and validates sk uniqueness.
void partition_iterative_data(const JobSpec& spec, const IterativeApp& app,
                              const std::vector<std::filesystem::path>& structure_runs,
                              const std::vector<std::filesystem::path>& state_runs,
                              const Workdir& wd, RunManifest* manifest, Metrics& metrics);

// --- drivers ---------------------------------------------------------------

struct IterationOutcome {
  int iterations = 0;
  bool converged = false;
  double final_l1 = 0.0;
  bool mrbg_disabled = false;   // change-fraction auto-off tripped
  int mrbg_disabled_at = -1;
  uint64_t failures_recovered = 0;
};

// Full iterative computation from the partitioned structure/state in wd.
// Leaves the converged state in partitions/<p>/state.run and the final
// flattened state under output/.
IterationOutcome run_iterative_job(const JobSpec& spec, const IterativeApp& app,
                                   const Workdir& wd, WorkerPool& pool, Metrics& metrics,
                                   FailurePlan* failures = nullptr);

// Rebuilds each partition's edge graph from the current structure + state
// (one map pass, one batch, no reduce). Brings the stores in line with the
// visible state so a delta job can start from them.
void build_edge_graph(const JobSpec& spec, const IterativeApp& app, const Workdir& wd,
                      WorkerPool& pool, Metrics& metrics);

// Copies partitions/ + manifest into wd/snapshot, the hand-off a follow-on
// delta job consumes.
void save_snapshot(const Workdir& wd, const RunManifest& manifest);

// Primes dst's partitions/ from a snapshot directory. Returns the
// snapshot's manifest.
RunManifest load_snapshot(const std::filesystem::path& snapshot_dir, const Workdir& dst);

// Delta-driven continuation from a primed workdir: iteration 1 applies the
// signed structure delta, later iterations propagate state changes, both
// touching only affected keys. Honors change filtering and the auto-off
// threshold; after auto-off the loop continues as full iterations.
// manifest carries the id counters in and the run outcome out.
IterationOutcome run_incr_iterative_job(const JobSpec& spec, const IterativeApp& app,
                                        const std::vector<std::filesystem::path>& delta_structure_runs,
                                        const Workdir& wd, RunManifest* manifest,
                                        WorkerPool& pool, Metrics& metrics,
                                        FailurePlan* failures = nullptr);

// Shared helpers (exposed for tests).
std::vector<KvRecord> load_state_file(const std::filesystem::path& path);
void write_state_file_atomic(const std::filesystem::path& path,
                             const std::vector<KvRecord>& records);

}  // namespace imr
