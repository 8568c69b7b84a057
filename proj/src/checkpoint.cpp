#include "imr/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "imr/common.hpp"

namespace imr {

namespace fs = std::filesystem;

namespace {

// The per-partition files a checkpoint carries, when present.
const char* const kPartitionFiles[] = {
    "structure.run", "state.run", "delta_state.run", "cpc.run",
    "mrbg.dat",      "mrbg.idx",  "results.run",     "results.idx",
};

fs::path ckpt_dir(const Workdir& wd, int iteration) {
  return wd.checkpoints_dir() / std::to_string(iteration);
}

fs::path ckpt_manifest(const Workdir& wd, int iteration) {
  return ckpt_dir(wd, iteration) / "manifest.json";
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorCode::kIo, "cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string partition_rel(int p, const char* name) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%05d/%s", p, name);
  return buf;
}

}  // namespace

void write_checkpoint(const Workdir& wd, int iteration, int partitions, Metrics& metrics) {
  double t0 = now_ms();
  fs::path dir = ckpt_dir(wd, iteration);
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<CheckpointFile> files;
  for (int p = 0; p < partitions; p++) {
    fs::create_directories(dir / partition_rel(p, ""));
    for (const char* name : kPartitionFiles) {
      fs::path src = wd.partition_dir(p) / name;
      if (!fs::exists(src)) continue;
      std::string content = read_all(src);
      fs::path dst = dir / partition_rel(p, name);
      {
        std::ofstream out(dst, std::ios::binary);
        if (!out) throw_error(ErrorCode::kIo, "cannot write " + dst.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
      }
      files.push_back({partition_rel(p, name), content.size(), fnv1a64(content)});
    }
  }

  // Manifest last: its presence certifies the copies above are complete.
  nlohmann::json j;
  j["iteration"] = iteration;
  j["files"] = nlohmann::json::array();
  for (const auto& f : files) {
    j["files"].push_back({{"path", f.rel_path}, {"bytes", f.bytes}, {"digest", f.digest}});
  }
  fs::path tmp = ckpt_manifest(wd, iteration);
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, ckpt_manifest(wd, iteration));
  metrics.add("checkpoints_written", 1);
  metrics.event("checkpoint", {{"iteration", iteration},
                               {"files", files.size()},
                               {"wall_ms", now_ms() - t0}});
}

namespace {

std::optional<CheckpointInfo> load_manifest(const Workdir& wd, int iteration) {
  fs::path path = ckpt_manifest(wd, iteration);
  std::ifstream in(path);
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  CheckpointInfo info;
  info.iteration = j.value("iteration", iteration);
  for (const auto& f : j.at("files")) {
    info.files.push_back({f.at("path").get<std::string>(), f.at("bytes").get<uint64_t>(),
                          f.at("digest").get<uint64_t>()});
  }
  return info;
}

}  // namespace

bool verify_checkpoint(const Workdir& wd, int iteration) {
  auto info = load_manifest(wd, iteration);
  if (!info) return false;
  for (const auto& f : info->files) {
    fs::path path = ckpt_dir(wd, iteration) / f.rel_path;
    if (!fs::exists(path) || fs::file_size(path) != f.bytes) return false;
    if (fnv1a64(read_all(path)) != f.digest) return false;
  }
  return true;
}

std::optional<int> latest_valid_checkpoint(const Workdir& wd, int upto) {
  for (int i = upto; i >= 0; i--) {
    if (verify_checkpoint(wd, i)) return i;
  }
  return std::nullopt;
}

void restore_partition(const Workdir& wd, int iteration, int partition) {
  auto info = load_manifest(wd, iteration);
  if (!info) {
    throw_error(ErrorCode::kNotFound,
                "checkpoint " + std::to_string(iteration) + " has no manifest");
  }
  std::string prefix = partition_rel(partition, "");
  // Remove current files of the kinds a checkpoint carries, then copy back
  // the checkpointed set; files absent from the checkpoint stay absent.
  for (const char* name : kPartitionFiles) {
    fs::remove(wd.partition_dir(partition) / name);
  }
  for (const auto& f : info->files) {
    if (f.rel_path.rfind(prefix, 0) != 0) continue;
    fs::path src = ckpt_dir(wd, iteration) / f.rel_path;
    std::string content = read_all(src);
    if (content.size() != f.bytes || fnv1a64(content) != f.digest) {
      throw_error(ErrorCode::kChecksum, "checkpoint file corrupt: " + src.string());
    }
    fs::path dst = wd.root() / "partitions" / f.rel_path;
    std::ofstream out(dst, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
}

std::vector<CheckpointInfo> list_checkpoints(const Workdir& wd) {
  std::vector<CheckpointInfo> out;
  if (!fs::exists(wd.checkpoints_dir())) return out;
  std::vector<int> iters;
  for (const auto& entry : fs::directory_iterator(wd.checkpoints_dir())) {
    if (!entry.is_directory()) continue;
    try {
      iters.push_back(std::stoi(entry.path().filename().string()));
    } catch (...) {
      continue;
    }
  }
  std::sort(iters.begin(), iters.end());
  for (int i : iters) {
    if (auto info = load_manifest(wd, i)) out.push_back(*info);
  }
  return out;
}

}  // namespace imr
