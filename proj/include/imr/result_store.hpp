#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imr/records.hpp"

namespace imr {

// The final key/value pairs one reduce group emitted, in emission order.
using ReduceOutputs = std::vector<KvRecord>;

// Persistent map from reduce key to that group's outputs, so an incremental
// run can patch exactly the groups it re-ran and retract groups that
// disappeared. Stored as a kv run (key = reduce key, value = packed
// outputs) plus a positional index; patches rewrite copy-on-write and
// swap in atomically.
class ResultStore {
 public:
  static void write(const std::filesystem::path& dir,
                    const std::map<std::string, ReduceOutputs>& groups);

  explicit ResultStore(const std::filesystem::path& dir);

  std::optional<ReduceOutputs> lookup(const std::string& k2) const;
  const std::map<std::string, ReduceOutputs>& groups() const { return groups_; }

  // Applies updates (nullopt retracts a group) and swaps the new files in.
  // A no-op patch leaves the files untouched byte for byte.
  void patch(const std::map<std::string, std::optional<ReduceOutputs>>& updates);

  // All outputs flattened and stably sorted by output key: the user-facing
  // view of this partition's result.
  std::vector<KvRecord> flattened() const;

 private:
  std::filesystem::path dir_;
  std::map<std::string, ReduceOutputs> groups_;
};

std::string pack_outputs(const ReduceOutputs& outputs);
ReduceOutputs unpack_outputs(const std::string& packed);

}  // namespace imr
