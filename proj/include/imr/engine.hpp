#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "imr/job_spec.hpp"
#include "imr/metrics.hpp"
#include "imr/run_file.hpp"
#include "imr/workdir.hpp"
#include "imr/worker_pool.hpp"

namespace imr {

// --- user-facing callback types --------------------------------------------

using MapEmit = std::function<void(const std::string& k2, const std::string& v2)>;
using MapFn = std::function<void(const KvRecord& record, const MapEmit& emit)>;

using ReduceEmit = std::function<void(const std::string& k3, const std::string& v3)>;
using ReduceFn = std::function<void(const std::string& k2, const std::vector<std::string>& values,
                                    const ReduceEmit& emit)>;

// Distributive fold for reducers of the shape reduce(k, vs) = ⊕ vs. Jobs
// declaring one get the cheap delta path: new deltas fold into the stored
// total without replaying old values.
struct AccumulatorFn {
  std::string identity;
  std::function<std::string(const std::string& a, const std::string& b)> combine;
};

struct OneStepApp {
  MapFn map;
  ReduceFn reduce;
  std::optional<AccumulatorFn> accumulator;
};

// --- partitioning ----------------------------------------------------------

struct Partitioner {
  uint32_t n = 1;
  uint32_t operator()(std::string_view key) const {
    return static_cast<uint32_t>(fnv1a64(key) % n);
  }
};

// --- shuffle building blocks (shared by every mode) ------------------------

// Buffers map emissions per reduce partition and spills each buffer as a
// sorted edge run when the byte budget fills. Sorting is stable, so an
// invocation's duplicate emissions keep their emission order.
class ShuffleSink {
 public:
  ShuffleSink(std::filesystem::path spill_dir, std::string tag, uint32_t partitions,
              uint64_t spill_budget_bytes);

  void emit(const MRBGEdge& edge);
  void finish();

  // spills()[p] lists partition p's runs in creation order.
  const std::vector<std::vector<std::filesystem::path>>& spills() const { return spills_; }
  uint64_t bytes_emitted() const { return total_bytes_; }
  uint64_t records_emitted() const { return total_records_; }

 private:
  void spill_partition(uint32_t p);

  std::filesystem::path spill_dir_;
  std::string tag_;
  Partitioner partitioner_;
  uint64_t budget_;
  uint64_t buffered_bytes_ = 0;
  uint64_t total_bytes_ = 0;
  uint64_t total_records_ = 0;
  std::vector<std::vector<MRBGEdge>> buffers_;
  std::vector<int> spill_seq_;
  std::vector<std::vector<std::filesystem::path>> spills_;
};

// Streaming k-way merge over sorted edge runs. Ties on (k2, mk, rank) break
// by source index, so merged order is independent of scheduling.
class EdgeMerger {
 public:
  explicit EdgeMerger(const std::vector<std::filesystem::path>& runs);

  bool next(MRBGEdge* out);

 private:
  struct Source {
    SortedRunReader reader;
    MRBGEdge head;
    bool has = false;
  };
  std::vector<std::unique_ptr<Source>> sources_;
};

// Pulls one reduce group (all edges of one k2) at a time from a merger.
class GroupCursor {
 public:
  explicit GroupCursor(EdgeMerger& merger) : merger_(&merger) { advance(); }

  bool next_group(std::string* k2, std::vector<MRBGEdge>* edges);

 private:
  void advance();
  EdgeMerger* merger_;
  MRBGEdge pending_;
  bool has_pending_ = false;
};

// --- plain (from-scratch) job ----------------------------------------------

struct PlainJobStats {
  uint64_t map_invocations = 0;
  uint64_t reduce_invocations = 0;
  uint64_t output_records = 0;
  uint64_t shuffle_bytes = 0;
};

// Runs map over every input run, shuffles, reduces every group, and writes
// per-partition outputs under the workdir. With spec.mrbg_enabled the run
// also persists the intermediate edge graph and per-group results, which is
// what a later delta job needs.
PlainJobStats run_plain_job(const JobSpec& spec, const OneStepApp& app,
                            const std::vector<std::filesystem::path>& input_runs,
                            const Workdir& wd, WorkerPool& pool, Metrics& metrics);

// Shared helpers.
void write_sorted_output(const std::filesystem::path& path, std::vector<KvRecord> records);
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace imr
