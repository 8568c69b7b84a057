#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imr/job_spec.hpp"

namespace imr {

// Canonical layout of one run's working directory:
//
//   manifest.json            run identity, spec, lineage, counters
//   metrics.jsonl            structured events
//   iterations.csv           per-iteration progress (iterative modes)
//   partitions/<p>/          per-partition persistent state
//     structure.run state.run mrbg.dat mrbg.idx results.run results.idx
//     cpc.run delta_state.run
//   output/part-<p>.run      flattened user-facing result
//   ckpt/<iter>/...          iteration checkpoints
//   snapshot/                converged snapshot for follow-on delta jobs
//   tmp/                     shuffle spills, removed after each phase
class Workdir {
 public:
  explicit Workdir(std::filesystem::path root) : root_(std::move(root)) {}

  static Workdir create(const std::filesystem::path& root, int partitions);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path partition_dir(int p) const;
  std::filesystem::path output_dir() const { return root_ / "output"; }
  std::filesystem::path output_run(int p) const;
  std::filesystem::path tmp_dir() const { return root_ / "tmp"; }
  std::filesystem::path manifest_path() const { return root_ / "manifest.json"; }
  std::filesystem::path metrics_path() const { return root_ / "metrics.jsonl"; }
  std::filesystem::path iterations_csv() const { return root_ / "iterations.csv"; }
  std::filesystem::path checkpoints_dir() const { return root_ / "ckpt"; }
  std::filesystem::path snapshot_dir() const { return root_ / "snapshot"; }

  std::filesystem::path structure_run(int p) const { return partition_dir(p) / "structure.run"; }
  std::filesystem::path state_run(int p) const { return partition_dir(p) / "state.run"; }
  std::filesystem::path cpc_run(int p) const { return partition_dir(p) / "cpc.run"; }
  std::filesystem::path delta_state_run(int p) const {
    return partition_dir(p) / "delta_state.run";
  }

  void clear_tmp() const;

 private:
  std::filesystem::path root_;
};

// Persistent description of a finished (or in-progress) run.
struct RunManifest {
  std::string run_id;
  std::string previous_run_id;
  JobSpec spec;
  int input_runs = 0;
  // Next unused map-invocation sequence per input/structure partition, so
  // delta inserts mint fresh ids that never collide with existing edges.
  std::vector<uint64_t> next_seq;
  // Same, for structure records inserted by delta jobs: one counter per
  // partition, addressing the kInsertPartitionBase id space.
  std::vector<uint64_t> insert_seq;
  bool mrbg_valid = false;
  int iterations_run = 0;
  bool converged = false;
  nlohmann::json counters = nlohmann::json::object();

  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

std::string make_run_id(const JobSpec& spec);

}  // namespace imr
