#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "imr/metrics.hpp"
#include "imr/workdir.hpp"

namespace imr {

// Iteration checkpoints live under <workdir>/ckpt/<iteration>/. A
// checkpoint copies each partition's persistent files, then writes its
// manifest (per-file sizes and digests) last — so a manifest's existence
// implies the files were fully written, and a digest mismatch flags the
// checkpoint as unusable.

struct CheckpointFile {
  std::string rel_path;
  uint64_t bytes = 0;
  uint64_t digest = 0;  // fnv1a64 of content
};

struct CheckpointInfo {
  int iteration = 0;
  std::vector<CheckpointFile> files;
};

void write_checkpoint(const Workdir& wd, int iteration, int partitions, Metrics& metrics);

// True when the manifest exists and every file matches its recorded size
// and digest.
bool verify_checkpoint(const Workdir& wd, int iteration);

// Newest iteration <= upto with a verifiable checkpoint.
std::optional<int> latest_valid_checkpoint(const Workdir& wd, int upto);

// Copies one partition's files back from the checkpoint, removing files
// that were not part of it.
void restore_partition(const Workdir& wd, int iteration, int partition);

std::vector<CheckpointInfo> list_checkpoints(const Workdir& wd);

}  // namespace imr
