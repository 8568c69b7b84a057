#include "imr/result_store.hpp"

#include <algorithm>
#include <fstream>

#include "imr/common.hpp"
#include "imr/run_file.hpp"

namespace imr {

namespace fs = std::filesystem;

namespace {

fs::path run_path(const fs::path& dir) { return dir / "results.run"; }
fs::path idx_path(const fs::path& dir) { return dir / "results.idx"; }

// The index is a flat list of (key, offset, length) rows mirroring the run
// file, so a reader can jump to one group without scanning.
void write_index(const fs::path& path, const std::vector<std::tuple<std::string, uint64_t, uint32_t>>& rows) {
  std::string buf;
  buf.append("IMRR", 4);
  append_u64(buf, rows.size());
  for (const auto& [key, off, len] : rows) {
    append_u32(buf, static_cast<uint32_t>(key.size()));
    buf += key;
    append_u64(buf, off);
    append_u32(buf, len);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw_error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  fs::rename(tmp, path);
}

void write_files(const fs::path& dir, const std::map<std::string, ReduceOutputs>& groups) {
  fs::create_directories(dir);
  fs::path tmp_run = run_path(dir);
  tmp_run += ".tmp";
  std::vector<std::tuple<std::string, uint64_t, uint32_t>> rows;
  {
    SortedRunWriter w(tmp_run, RecordKind::kKv);
    for (const auto& [k2, outputs] : groups) {
      w.add(KvRecord{k2, pack_outputs(outputs)});
    }
    w.close();
  }
  {
    SortedRunReader r(tmp_run);
    KvRecord rec;
    while (r.next(&rec)) {
      rows.emplace_back(rec.key, r.last_span().offset, r.last_span().length);
    }
  }
  fs::rename(tmp_run, run_path(dir));
  write_index(idx_path(dir), rows);
}

}  // namespace

std::string pack_outputs(const ReduceOutputs& outputs) {
  std::string buf;
  append_u32(buf, static_cast<uint32_t>(outputs.size()));
  for (const auto& o : outputs) {
    append_u32(buf, static_cast<uint32_t>(o.key.size()));
    buf += o.key;
    append_u32(buf, static_cast<uint32_t>(o.value.size()));
    buf += o.value;
  }
  return buf;
}

ReduceOutputs unpack_outputs(const std::string& packed) {
  ReduceOutputs out;
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > packed.size()) {
      throw_error(ErrorCode::kCorruptFrame, "bad packed reduce outputs");
    }
  };
  need(4);
  uint32_t n = read_u32(packed, 0);
  pos = 4;
  out.reserve(n);
  for (uint32_t i = 0; i < n; i++) {
    KvRecord r;
    need(4);
    uint32_t klen = read_u32(packed, pos);
    pos += 4;
    need(klen);
    r.key = packed.substr(pos, klen);
    pos += klen;
    need(4);
    uint32_t vlen = read_u32(packed, pos);
    pos += 4;
    need(vlen);
    r.value = packed.substr(pos, vlen);
    pos += vlen;
    out.push_back(std::move(r));
  }
  if (pos != packed.size()) {
    throw_error(ErrorCode::kCorruptFrame, "trailing bytes in packed reduce outputs");
  }
  return out;
}

void ResultStore::write(const fs::path& dir, const std::map<std::string, ReduceOutputs>& groups) {
  write_files(dir, groups);
}

ResultStore::ResultStore(const fs::path& dir) : dir_(dir) {
  if (!fs::exists(run_path(dir))) {
    throw_error(ErrorCode::kNotFound, "result store missing: " + run_path(dir).string());
  }
  for (const auto& rec : read_kv_run(run_path(dir))) {
    groups_[rec.key] = unpack_outputs(rec.value);
  }
}

std::optional<ReduceOutputs> ResultStore::lookup(const std::string& k2) const {
  auto it = groups_.find(k2);
  if (it == groups_.end()) return std::nullopt;
  return it->second;
}

void ResultStore::patch(const std::map<std::string, std::optional<ReduceOutputs>>& updates) {
  bool changed = false;
  for (const auto& [k2, outputs] : updates) {
    if (outputs) {
      auto it = groups_.find(k2);
      if (it == groups_.end() || it->second != *outputs) {
        groups_[k2] = *outputs;
        changed = true;
      }
    } else if (groups_.erase(k2) > 0) {
      changed = true;
    }
  }
  if (changed) write_files(dir_, groups_);
}

std::vector<KvRecord> ResultStore::flattened() const {
  std::vector<KvRecord> out;
  for (const auto& [k2, outputs] : groups_) {
    out.insert(out.end(), outputs.begin(), outputs.end());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const KvRecord& a, const KvRecord& b) { return a.key < b.key; });
  return out;
}

}  // namespace imr
