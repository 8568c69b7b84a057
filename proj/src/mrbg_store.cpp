#include "imr/mrbg_store.hpp"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <limits>

#include "imr/common.hpp"

namespace imr {

namespace fs = std::filesystem;

namespace {

constexpr char kDatMagic[4] = {'I', 'M', 'R', 'D'};
constexpr char kIdxMagic[4] = {'I', 'M', 'R', 'X'};
constexpr uint32_t kStoreVersion = 1;
constexpr size_t kDatHeaderBytes = 4 + 4 + 8;

fs::path dat_path(const fs::path& dir) { return dir / "mrbg.dat"; }
fs::path idx_path(const fs::path& dir) { return dir / "mrbg.idx"; }
fs::path dat_new_path(const fs::path& dir) { return dir / "mrbg.dat.new"; }

[[noreturn]] void io_fail(const char* op, const fs::path& path) {
  throw_error(ErrorCode::kIo, std::string(op) + " failed for " + path.string() + ": " +
                                  std::strerror(errno));
}

std::string dat_header(uint64_t generation) {
  std::string h;
  h.append(kDatMagic, 4);
  append_u32(h, kStoreVersion);
  append_u64(h, generation);
  return h;
}

uint64_t read_dat_generation(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorCode::kNotFound, "data file missing: " + path.string());
  char h[kDatHeaderBytes];
  in.read(h, sizeof h);
  if (in.gcount() != static_cast<std::streamsize>(sizeof h) ||
      std::memcmp(h, kDatMagic, 4) != 0) {
    throw_error(ErrorCode::kCorruptFrame, "bad data file header: " + path.string());
  }
  return read_u64(std::string_view(h, sizeof h), 8);
}

void fsync_file(std::FILE* f, const fs::path& path) {
  if (std::fflush(f) != 0) io_fail("flush", path);
  if (::fsync(fileno(f)) != 0) io_fail("fsync", path);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) io_fail("open", tmp);
  if (std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    io_fail("write", tmp);
  }
  fsync_file(f, tmp);
  std::fclose(f);
  fs::rename(tmp, path);
}

}  // namespace

std::string encode_chunk(const Chunk& chunk) {
  std::string payload;
  append_u32(payload, static_cast<uint32_t>(chunk.k2.size()));
  payload += chunk.k2;
  append_u32(payload, static_cast<uint32_t>(chunk.edges.size()));
  for (const auto& e : chunk.edges) {
    append_u32(payload, e.mk.partition);
    append_u64(payload, e.mk.sequence);
    append_u32(payload, static_cast<uint32_t>(e.v2.size()));
    payload += e.v2;
  }
  if (payload.size() > std::numeric_limits<uint32_t>::max()) {
    throw_error(ErrorCode::kEncodingLimit, "chunk exceeds frame limit: " + chunk.k2);
  }
  std::string out;
  append_u32(out, static_cast<uint32_t>(payload.size()));
  out += payload;
  return out;
}

Chunk decode_chunk(std::string_view buf, size_t off, size_t* end) {
  auto corrupt = [&]() {
    throw_error(ErrorCode::kCorruptFrame, "bad chunk frame at offset " + std::to_string(off));
  };
  if (off + 4 > buf.size()) corrupt();
  uint32_t len = read_u32(buf, off);
  size_t limit = off + 4 + len;
  if (limit > buf.size()) corrupt();
  size_t pos = off + 4;
  auto need = [&](size_t n) {
    if (pos + n > limit) corrupt();
  };
  Chunk c;
  need(4);
  uint32_t klen = read_u32(buf, pos);
  pos += 4;
  need(klen);
  c.k2.assign(buf.substr(pos, klen));
  pos += klen;
  need(4);
  uint32_t n = read_u32(buf, pos);
  pos += 4;
  c.edges.reserve(n);
  for (uint32_t i = 0; i < n; i++) {
    StoredEdge e;
    need(16);
    e.mk.partition = read_u32(buf, pos);
    e.mk.sequence = read_u64(buf, pos + 4);
    uint32_t vlen = read_u32(buf, pos + 12);
    pos += 16;
    need(vlen);
    e.v2.assign(buf.substr(pos, vlen));
    pos += vlen;
    c.edges.push_back(std::move(e));
  }
  if (pos != limit) corrupt();
  if (end) *end = limit;
  return c;
}

void MrbgStore::init(const fs::path& dir) {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(dat_path(dir).c_str(), "wb");
  if (!f) io_fail("open", dat_path(dir));
  std::string h = dat_header(0);
  if (std::fwrite(h.data(), 1, h.size(), f) != h.size()) io_fail("write", dat_path(dir));
  fsync_file(f, dat_path(dir));
  std::fclose(f);

  std::string idx;
  idx.append(kIdxMagic, 4);
  append_u32(idx, kStoreVersion);
  append_u64(idx, 0);  // generation
  append_u64(idx, 0);  // next batch id
  append_u32(idx, 0);  // batch count
  append_u64(idx, 0);  // entry count
  write_file_atomic(idx_path(dir), idx);
}

MrbgStore::MrbgStore(const fs::path& dir, StoreOptions options)
    : dir_(dir), options_(options) {
  load_index();

  // Resolve an interrupted compaction. The index swap is the commit point:
  // a surviving mrbg.dat.new matching the committed index generation only
  // needs its rename finished; any other leftover is an uncommitted attempt.
  fs::path pending = dat_new_path(dir_);
  if (fs::exists(pending)) {
    if (read_dat_generation(pending) == generation_) {
      fs::rename(pending, dat_path(dir_));
    } else {
      fs::remove(pending);
    }
  }

  open_data_file();
  uint64_t dat_gen = read_dat_generation(dat_path(dir_));
  if (dat_gen != generation_) {
    throw_error(ErrorCode::kStateMismatch,
                "index generation " + std::to_string(generation_) +
                    " does not match data file generation " + std::to_string(dat_gen) +
                    " in " + dir_.string());
  }

  // Discard any tail past the last sealed batch. A writer that died with a
  // batch open leaves bytes the index never committed; dropping them keeps
  // a retried append byte-identical to one that never failed.
  uint64_t sealed_end = dat_header(generation_).size();
  for (const auto& b : batches_) sealed_end = std::max(sealed_end, b.start + b.length);
  if (file_end_ < sealed_end) {
    throw_error(ErrorCode::kCorruptFrame,
                "data file shorter than its sealed extent: " + dat_path(dir_).string());
  }
  if (file_end_ > sealed_end) {
    std::fclose(dat_);
    dat_ = nullptr;
    fs::resize_file(dat_path(dir_), sealed_end);
    open_data_file();
  }
}

MrbgStore::~MrbgStore() {
  if (dat_) std::fclose(dat_);
}

void MrbgStore::load_index() {
  std::ifstream in(idx_path(dir_), std::ios::binary);
  if (!in) throw_error(ErrorCode::kNotFound, "index missing: " + idx_path(dir_).string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 28 || std::memcmp(buf.data(), kIdxMagic, 4) != 0) {
    throw_error(ErrorCode::kCorruptFrame, "bad index header: " + idx_path(dir_).string());
  }
  if (read_u32(buf, 4) != kStoreVersion) {
    throw_error(ErrorCode::kCorruptFrame, "unsupported index version");
  }
  generation_ = read_u64(buf, 8);
  next_batch_id_ = read_u64(buf, 16);
  uint32_t nbatches = read_u32(buf, 24);
  size_t pos = 28;
  auto need = [&](size_t n) {
    if (pos + n > buf.size()) {
      throw_error(ErrorCode::kCorruptFrame, "truncated index: " + idx_path(dir_).string());
    }
  };
  batches_.clear();
  for (uint32_t i = 0; i < nbatches; i++) {
    need(24);
    batches_.push_back({read_u64(buf, pos), read_u64(buf, pos + 8), read_u64(buf, pos + 16)});
    pos += 24;
  }
  need(8);
  uint64_t nentries = read_u64(buf, pos);
  pos += 8;
  index_.clear();
  std::string prev;
  for (uint64_t i = 0; i < nentries; i++) {
    need(4);
    uint32_t klen = read_u32(buf, pos);
    pos += 4;
    need(klen + 20);
    std::string key = buf.substr(pos, klen);
    pos += klen;
    ChunkLocation loc;
    loc.batch_id = read_u64(buf, pos);
    loc.offset = read_u64(buf, pos + 8);
    loc.length = read_u32(buf, pos + 16);
    pos += 20;
    if (i > 0 && key <= prev) {
      throw_error(ErrorCode::kCorruptFrame, "index entries out of order");
    }
    index_.emplace_hint(index_.end(), key, loc);
    prev = std::move(key);
  }
}

void MrbgStore::persist_index(const fs::path& path, uint64_t generation,
                              const std::vector<BatchInfo>& batches,
                              const std::map<std::string, ChunkLocation>& index,
                              uint64_t next_batch_id) const {
  std::string buf;
  buf.append(kIdxMagic, 4);
  append_u32(buf, kStoreVersion);
  append_u64(buf, generation);
  append_u64(buf, next_batch_id);
  append_u32(buf, static_cast<uint32_t>(batches.size()));
  for (const auto& b : batches) {
    append_u64(buf, b.id);
    append_u64(buf, b.start);
    append_u64(buf, b.length);
  }
  append_u64(buf, index.size());
  for (const auto& [key, loc] : index) {
    append_u32(buf, static_cast<uint32_t>(key.size()));
    buf += key;
    append_u64(buf, loc.batch_id);
    append_u64(buf, loc.offset);
    append_u32(buf, loc.length);
  }
  write_file_atomic(path, buf);
}

void MrbgStore::open_data_file() {
  if (dat_) std::fclose(dat_);
  dat_ = std::fopen(dat_path(dir_).c_str(), "r+b");
  if (!dat_) io_fail("open", dat_path(dir_));
  file_end_ = fs::file_size(dat_path(dir_));
}

std::string MrbgStore::read_raw(uint64_t offset, uint64_t length) {
  std::string out(length, '\0');
  if (std::fseek(dat_, static_cast<long>(offset), SEEK_SET) != 0) io_fail("seek", dat_path(dir_));
  size_t got = std::fread(out.data(), 1, out.size(), dat_);
  if (got != out.size()) {
    throw_error(ErrorCode::kCorruptFrame,
                "short read at " + std::to_string(offset) + " in " + dat_path(dir_).string());
  }
  counters_.reads_issued++;
  counters_.bytes_read += length;
  return out;
}

void MrbgStore::write_raw_at_end(const std::string& bytes) {
  if (bytes.empty()) return;
  if (std::fseek(dat_, 0, SEEK_END) != 0) io_fail("seek", dat_path(dir_));
  if (std::fwrite(bytes.data(), 1, bytes.size(), dat_) != bytes.size()) {
    io_fail("write", dat_path(dir_));
  }
  file_end_ += bytes.size();
}

std::vector<std::string> MrbgStore::sorted_keys() const {
  std::vector<std::string> keys;
  keys.reserve(index_.size());
  for (const auto& [k, loc] : index_) keys.push_back(k);
  return keys;
}

// --- query pass ------------------------------------------------------------

MrbgStore::QueryPass MrbgStore::begin_query_pass(const std::vector<std::string>& sorted_keys,
                                                 std::optional<QueryPolicy> policy_override) {
  QueryPass pass;
  pass.store_ = this;
  pass.policy_ = policy_override.value_or(options_.policy);
  pass.keys_.reserve(sorted_keys.size());
  for (size_t i = 0; i < sorted_keys.size(); i++) {
    if (i > 0 && sorted_keys[i] < sorted_keys[i - 1]) {
      throw_error(ErrorCode::kSortViolation, "query pass keys not ascending");
    }
    QueryPass::PlannedKey pk;
    pk.k2 = sorted_keys[i];
    auto it = index_.find(pk.k2);
    if (it != index_.end()) pk.loc = it->second;
    pass.keys_.push_back(std::move(pk));
  }
  // Build the per-batch chunk lists the window growth walks over. Keys of a
  // batch are appended in ascending key order, so offsets ascend too.
  for (auto& pk : pass.keys_) {
    if (!pk.loc) continue;
    auto& list = pass.batch_lists_[pk.loc->batch_id];
    pk.batch_list_index = list.size();
    list.push_back({pk.loc->offset, pk.loc->length});
  }
  for (const auto& b : batches_) pass.batch_info_[b.id] = b;
  return pass;
}

std::optional<Chunk> MrbgStore::QueryPass::get(const std::string& k2) {
  store_->counters_.queries++;
  while (cursor_ < keys_.size() && keys_[cursor_].k2 < k2) cursor_++;
  if (cursor_ >= keys_.size() || keys_[cursor_].k2 != k2) {
    throw_error(ErrorCode::kContractViolation,
                "query pass key not planned or out of order: " + k2);
  }
  PlannedKey& pk = keys_[cursor_];
  cursor_++;
  if (!pk.loc) {
    store_->counters_.absent++;
    return std::nullopt;
  }
  store_->counters_.hits++;
  return read_chunk(pk);
}

Chunk MrbgStore::QueryPass::read_chunk(const PlannedKey& key) {
  const ChunkLocation& loc = *key.loc;
  StoreCounters& c = store_->counters_;

  if (policy_ == QueryPolicy::kIndexOnly) {
    // One exact read per query; no window reuse.
    std::string raw = store_->read_raw(loc.offset, loc.length);
    return decode_chunk(raw, 0);
  }

  uint64_t window_slot = policy_ == QueryPolicy::kSingleFixedWindow ? 0 : loc.batch_id;
  auto wit = windows_.find(window_slot);
  if (wit != windows_.end()) {
    const Window& w = wit->second;
    if (loc.offset >= w.start && loc.offset + loc.length <= w.start + w.data.size()) {
      c.window_hits++;
      return decode_chunk(w.data, loc.offset - w.start);
    }
  }

  uint64_t want = 0;
  if (policy_ == QueryPolicy::kSingleFixedWindow) {
    want = store_->options_.read_cache_bytes;
    windows_.clear();  // a single window: any previous one is replaced
  } else {
    // Dynamic growth: extend over following chunks of the same batch while
    // the gap to the next one stays under the threshold and the window
    // still fits the read cache. Chunks living in other batches are
    // invisible to this walk; they have their own windows.
    const auto& list = batch_lists_.at(loc.batch_id);
    const uint64_t T = store_->options_.gap_threshold_bytes;
    const uint64_t cache = store_->options_.read_cache_bytes;
    size_t i = key.batch_list_index;
    uint64_t w = 0;
    uint64_t gap = 0;
    while (gap < T && w + gap + list[i].second < cache) {
      w += gap + list[i].second;
      if (i + 1 < list.size()) {
        gap = list[i + 1].first - (list[i].first + list[i].second);
      } else {
        gap = std::numeric_limits<uint64_t>::max();  // no further chunk
      }
      i++;
    }
    // An oversized chunk never fits the cache; read it whole regardless.
    want = std::max<uint64_t>(w, loc.length);
  }

  // Clamp to the batch region (windows never straddle batches) and file end.
  uint64_t limit = store_->file_end_;
  auto bit = batch_info_.find(loc.batch_id);
  if (bit != batch_info_.end() && policy_ == QueryPolicy::kMultiDynamicWindow) {
    limit = std::min(limit, bit->second.start + bit->second.length);
  }
  want = std::min(want, limit - loc.offset);
  want = std::max<uint64_t>(want, loc.length);

  std::string data = store_->read_raw(loc.offset, want);
  Window& w = windows_[window_slot];
  w.start = loc.offset;
  w.data = std::move(data);
  return decode_chunk(w.data, 0);
}

std::optional<Chunk> MrbgStore::get(const std::string& k2) {
  auto pass = begin_query_pass({k2});
  return pass.get(k2);
}

// --- append pass -----------------------------------------------------------

void MrbgStore::begin_append_batch() {
  if (batch_open_) {
    throw_error(ErrorCode::kContractViolation, "append batch already open");
  }
  batch_open_ = true;
  batch_id_ = next_batch_id_++;
  batch_start_ = file_end_;
  batch_written_ = 0;
  append_buf_.clear();
  last_appended_key_.clear();
  batch_has_chunks_ = false;
  pending_puts_.clear();
  pending_drops_.clear();
}

void MrbgStore::append_chunk(const Chunk& chunk) {
  if (!batch_open_) {
    throw_error(ErrorCode::kContractViolation, "append_chunk without an open batch");
  }
  if (batch_has_chunks_ && chunk.k2 <= last_appended_key_) {
    throw_error(ErrorCode::kSortViolation,
                "chunks must append in ascending key order: " + chunk.k2);
  }
  last_appended_key_ = chunk.k2;
  batch_has_chunks_ = true;
  std::string frame = encode_chunk(chunk);
  ChunkLocation loc;
  loc.batch_id = batch_id_;
  loc.offset = batch_start_ + batch_written_ + append_buf_.size();
  loc.length = static_cast<uint32_t>(frame.size());
  pending_puts_.emplace_back(chunk.k2, loc);
  append_buf_ += frame;
  counters_.chunks_appended++;
  if (append_buf_.size() >= options_.append_buffer_bytes) {
    write_raw_at_end(append_buf_);
    batch_written_ += append_buf_.size();
    append_buf_.clear();
  }
}

void MrbgStore::drop_key(const std::string& k2) {
  if (!batch_open_) {
    throw_error(ErrorCode::kContractViolation, "drop_key without an open batch");
  }
  pending_drops_.push_back(k2);
  counters_.keys_dropped++;
}

void MrbgStore::seal_batch() {
  if (!batch_open_) {
    throw_error(ErrorCode::kContractViolation, "seal_batch without an open batch");
  }
  write_raw_at_end(append_buf_);
  batch_written_ += append_buf_.size();
  append_buf_.clear();
  fsync_file(dat_, dat_path(dir_));

  if (batch_written_ > 0) {
    batches_.push_back({batch_id_, batch_start_, batch_written_});
  }
  for (const auto& k : pending_drops_) index_.erase(k);
  for (const auto& [k, loc] : pending_puts_) index_[k] = loc;
  persist_index(idx_path(dir_), generation_, batches_, index_, next_batch_id_);
  batch_open_ = false;
}

// --- compaction ------------------------------------------------------------

void MrbgStore::compact(CompactionCrashPoint crash) {
  if (batch_open_) {
    throw_error(ErrorCode::kContractViolation, "cannot compact with an open batch");
  }
  uint64_t new_gen = generation_ + 1;
  fs::path new_dat = dat_new_path(dir_);

  std::map<std::string, ChunkLocation> new_index;
  std::vector<BatchInfo> new_batches;
  {
    std::FILE* out = std::fopen(new_dat.c_str(), "wb");
    if (!out) io_fail("open", new_dat);
    std::string h = dat_header(new_gen);
    if (std::fwrite(h.data(), 1, h.size(), out) != h.size()) io_fail("write", new_dat);
    uint64_t off = h.size();
    uint64_t start = off;
    for (const auto& [key, loc] : index_) {
      std::string raw = read_raw(loc.offset, loc.length);
      // Re-encode defensively: validates the frame while copying.
      Chunk c = decode_chunk(raw, 0);
      std::string frame = encode_chunk(c);
      if (std::fwrite(frame.data(), 1, frame.size(), out) != frame.size()) {
        std::fclose(out);
        io_fail("write", new_dat);
      }
      new_index[key] = ChunkLocation{0, off, static_cast<uint32_t>(frame.size())};
      off += frame.size();
    }
    if (off > start) new_batches.push_back({0, start, off - start});
    fsync_file(out, new_dat);
    std::fclose(out);
  }
  if (crash == CompactionCrashPoint::kAfterDataFile) throw CrashInjected{};

  // Commit point: once the new index (new generation) replaces the old one,
  // the compaction is durable and open() will finish the data-file rename.
  persist_index(idx_path(dir_), new_gen, new_batches, new_index, 1);
  if (crash == CompactionCrashPoint::kAfterIndexSwap) throw CrashInjected{};

  fs::rename(new_dat, dat_path(dir_));

  generation_ = new_gen;
  next_batch_id_ = 1;
  index_ = std::move(new_index);
  batches_ = std::move(new_batches);
  open_data_file();
}

}  // namespace imr
