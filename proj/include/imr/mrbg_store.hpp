#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imr/records.hpp"

namespace imr {

// Persistent map from reduce key to that key's full edge list (one chunk).
// Layout: an append-only data file holding chunk frames, grouped into
// batches (one batch per merge pass), plus a sidecar index file mapping key
// to (batch, offset, length). All edges of a key live in exactly one chunk;
// a re-merged key's new chunk lands in the newest batch and the index entry
// moves, leaving the old chunk as dead bytes until compaction.

struct StoredEdge {
  MapKey mk;
  std::string v2;

  bool operator==(const StoredEdge&) const = default;
};

struct Chunk {
  std::string k2;
  std::vector<StoredEdge> edges;  // ascending mk

  bool operator==(const Chunk&) const = default;
};

struct ChunkLocation {
  uint64_t batch_id = 0;
  uint64_t offset = 0;  // into the data file
  uint32_t length = 0;  // frame bytes
};

struct BatchInfo {
  uint64_t id = 0;
  uint64_t start = 0;
  uint64_t length = 0;
};

// How a query pass turns index hits into file reads. Correctness is
// identical across policies; they differ only in I/O shape. The merge path
// always uses the multi-window policy; the others exist for measurement.
enum class QueryPolicy {
  kIndexOnly,           // one exact-size read per query, no caching
  kSingleFixedWindow,   // one cache-sized read per miss, single window
  kMultiDynamicWindow,  // gap-bounded dynamic window per batch
};

struct StoreOptions {
  uint64_t gap_threshold_bytes = 100 * 1024;
  uint64_t read_cache_bytes = 1ull << 20;
  uint64_t append_buffer_bytes = 4ull << 20;
  QueryPolicy policy = QueryPolicy::kMultiDynamicWindow;
};

struct StoreCounters {
  uint64_t queries = 0;
  uint64_t hits = 0;           // key present in the index
  uint64_t absent = 0;         // key not present (answered without I/O)
  uint64_t reads_issued = 0;   // file reads
  uint64_t bytes_read = 0;
  uint64_t window_hits = 0;    // served from an already-read window
  uint64_t chunks_appended = 0;
  uint64_t keys_dropped = 0;
};

// Points where a test can abort compaction to exercise crash recovery.
enum class CompactionCrashPoint { kNone, kAfterDataFile, kAfterIndexSwap };

struct CrashInjected {};

class MrbgStore {
 public:
  // Creates empty store files in `dir` (mrbg.dat / mrbg.idx).
  static void init(const std::filesystem::path& dir);

  // Opens an existing store, finishing or discarding any interrupted
  // compaction first.
  MrbgStore(const std::filesystem::path& dir, StoreOptions options);
  ~MrbgStore();

  MrbgStore(const MrbgStore&) = delete;
  MrbgStore& operator=(const MrbgStore&) = delete;

  bool contains(const std::string& k2) const { return index_.count(k2) > 0; }
  size_t key_count() const { return index_.size(); }
  std::vector<std::string> sorted_keys() const;
  size_t batch_count() const { return batches_.size(); }
  uint64_t generation() const { return generation_; }
  uint64_t data_file_bytes() const { return file_end_; }

  // One ascending read pass over a fixed set of keys. Locations snapshot at
  // construction, so appends from the same merge pass stay invisible to it.
  class QueryPass {
   public:
    // Returns the chunk for k2, or nullopt if the store holds no such key.
    // Keys must be requested in ascending order and be members of `keys`.
    std::optional<Chunk> get(const std::string& k2);

   private:
    friend class MrbgStore;
    struct PlannedKey {
      std::string k2;
      std::optional<ChunkLocation> loc;
      size_t batch_list_index = 0;  // position within its batch's chunk list
    };
    struct Window {
      uint64_t start = 0;
      std::string data;
    };

    Chunk read_chunk(const PlannedKey& key);

    MrbgStore* store_ = nullptr;
    QueryPolicy policy_ = QueryPolicy::kMultiDynamicWindow;
    std::vector<PlannedKey> keys_;
    // Per batch: ascending (offset, length) of this pass's chunks in it.
    std::map<uint64_t, std::vector<std::pair<uint64_t, uint32_t>>> batch_lists_;
    std::map<uint64_t, BatchInfo> batch_info_;
    std::map<uint64_t, Window> windows_;
    size_t cursor_ = 0;
  };

  QueryPass begin_query_pass(const std::vector<std::string>& sorted_keys,
                             std::optional<QueryPolicy> policy_override = {}) ;

  // Single-key convenience read (its own one-key pass).
  std::optional<Chunk> get(const std::string& k2);

  // Append pass: all chunks of one merge land in one new batch. Chunks must
  // arrive in ascending key order; the index and batch table only update at
  // seal_batch, and readers meanwhile see the previous snapshot.
  void begin_append_batch();
  void append_chunk(const Chunk& chunk);
  void drop_key(const std::string& k2);
  void seal_batch();

  // Rewrites the data file with only live chunks (one batch, new
  // generation). The index-file swap is the commit point.
  void compact(CompactionCrashPoint crash = CompactionCrashPoint::kNone);

  const StoreCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = StoreCounters{}; }

 private:
  void load_index();
  void persist_index(const std::filesystem::path& idx_path, uint64_t generation,
                     const std::vector<BatchInfo>& batches,
                     const std::map<std::string, ChunkLocation>& index,
                     uint64_t next_batch_id) const;
  void open_data_file();
  std::string read_raw(uint64_t offset, uint64_t length);
  void write_raw_at_end(const std::string& bytes);

  std::filesystem::path dir_;
  StoreOptions options_;
  std::FILE* dat_ = nullptr;
  uint64_t generation_ = 0;
  uint64_t next_batch_id_ = 0;
  uint64_t file_end_ = 0;
  std::map<std::string, ChunkLocation> index_;
  std::vector<BatchInfo> batches_;
  StoreCounters counters_;

  // Open append batch.
  bool batch_open_ = false;
  uint64_t batch_id_ = 0;
  uint64_t batch_start_ = 0;
  uint64_t batch_written_ = 0;
  std::string append_buf_;
  std::string last_appended_key_;
  bool batch_has_chunks_ = false;
  std::vector<std::pair<std::string, ChunkLocation>> pending_puts_;
  std::vector<std::string> pending_drops_;
};

// Chunk frame codec (exposed for tests and the compaction path).
std::string encode_chunk(const Chunk& chunk);
Chunk decode_chunk(std::string_view buf, size_t off, size_t* end = nullptr);

}  // namespace imr
