#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace imr {

struct GenSummary {
  std::string app;
  uint64_t records = 0;  // one-step input records, or structure records
  uint64_t state_records = 0;
  int runs = 0;
  nlohmann::json params;  // effective parameters after defaulting

  nlohmann::json to_json() const;
};

// Writes a seeded synthetic workload for `app` into out_dir.
//
// One-step apps produce sorted part-*.run input files directly in out_dir.
// Iterative apps produce structure/ and state/ subdirectories. Both kinds
// get a gen_manifest.json recording the effective parameters, and apps that
// need runtime configuration (candidate pairs, damping, source vertex,
// block size) also get an app_config.json.
//
// Recognized params (all optional): records, input_runs, vocab, doc_len,
// candidates, vertices, degree, weight_range, points, clusters, dims,
// blocks, block_size. Same app+params+seed always produces identical bytes.
GenSummary generate_input(const std::string& app, nlohmann::json params, uint64_t seed,
                          const std::filesystem::path& out_dir);

struct DeltaSummary {
  std::string app;
  uint64_t base_records = 0;
  uint64_t touched = 0;  // distinct base records deleted or updated
  uint64_t deletes = 0;  // delete frames written (updates contribute one each)
  uint64_t inserts = 0;  // insert frames written
  uint64_t delta_records = 0;

  nlohmann::json to_json() const;
};

// Derives a signed delta from a base directory previously written by
// generate_input. Exactly floor(fraction * base_records) base records are
// touched. `ops` picks the mix:
//   mixed   ~50% value updates, ~25% deletes, ~25% delete+insert-new-key
//   update  every touched record gets a fresh value (delete + insert)
//   delete  every touched record is removed
//   insert  no base records touched; that many brand-new records instead
// Deletes carry the original record's run/position id; inserts take appended
// positions past the base run's end. Output goes to out_dir/part-00000.run
// plus a delta_summary.json.
DeltaSummary generate_delta(const std::string& app, const std::filesystem::path& base_dir,
                            double fraction, const std::string& ops, uint64_t seed,
                            const std::filesystem::path& out_dir);

}  // namespace imr
