#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "imr/records.hpp"

namespace imr {

// A run file is a small header followed by sorted, length-prefixed frames.
// The header pins what record type the frames decode as; readers refuse a
// kind mismatch instead of misparsing.
//
//   magic "IMR1" | u32 version | u8 kind | u64 record_count | u64 batch_id

enum class RecordKind : uint8_t { kKv = 0, kDelta = 1, kEdge = 2 };

inline constexpr char kRunMagic[4] = {'I', 'M', 'R', '1'};
inline constexpr uint32_t kRunVersion = 1;
inline constexpr size_t kRunHeaderBytes = 4 + 4 + 1 + 8 + 8;

struct RunHeader {
  uint32_t version = kRunVersion;
  RecordKind kind = RecordKind::kKv;
  uint64_t record_count = 0;
  uint64_t batch_id = 0;
};

// Byte placement of one record inside a run file, usable for positioned
// reads without rescanning.
struct RecordSpan {
  uint64_t offset = 0;
  uint32_t length = 0;
};

// Writes records in key order, validating as it goes: KvRecord and
// DeltaRecord must be non-decreasing by key; MRBGEdge must be non-decreasing
// by (k2, mk, tombstone-first). Out-of-order input raises kSortViolation.
class SortedRunWriter {
 public:
  SortedRunWriter(const std::filesystem::path& path, RecordKind kind, uint64_t batch_id = 0);
  ~SortedRunWriter();

  SortedRunWriter(const SortedRunWriter&) = delete;
  SortedRunWriter& operator=(const SortedRunWriter&) = delete;

  void add(const KvRecord& r);
  void add(const DeltaRecord& r);
  void add(const MRBGEdge& r);

  // Flushes, patches the record count into the header and closes the file.
  // Returns the number of records written.
  uint64_t close();

  uint64_t record_count() const { return count_; }
  uint64_t bytes_written() const { return offset_; }

 private:
  void write_frame(const std::string& frame);

  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
  RecordKind kind_;
  uint64_t count_ = 0;
  uint64_t offset_ = 0;
  bool closed_ = false;
  std::string last_key_;
  MapKey last_mk_;
  int last_rank_ = 0;
  bool have_last_ = false;
};

// Streaming reader with positioned access. Sequential reads refill a fixed
// buffer so runs larger than memory stream fine; read_at seeks directly.
class SortedRunReader {
 public:
  explicit SortedRunReader(const std::filesystem::path& path);
  ~SortedRunReader();

  SortedRunReader(const SortedRunReader&) = delete;
  SortedRunReader& operator=(const SortedRunReader&) = delete;
  SortedRunReader(SortedRunReader&& other) noexcept;

  const RunHeader& header() const { return header_; }
  const std::filesystem::path& path() const { return path_; }

  // Sequential interface; each next_* consumes one frame. The out param is
  // untouched on end-of-run. The span of the record just read is available
  // via last_span().
  bool next(KvRecord* out);
  bool next(DeltaRecord* out);
  bool next(MRBGEdge* out);
  RecordSpan last_span() const { return last_span_; }

  // Positioned reads; independent of the sequential cursor.
  KvRecord read_kv_at(RecordSpan span);
  MRBGEdge read_edge_at(RecordSpan span);

 private:
  bool fill_to(size_t need);
  template <typename T>
  bool next_impl(T* out, RecordKind expect);
  std::string read_span(RecordSpan span);

  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
  RunHeader header_;
  std::string buf_;
  size_t buf_pos_ = 0;       // consumed prefix of buf_
  uint64_t buf_file_off_ = 0;  // file offset of buf_[0]
  uint64_t next_read_off_ = 0;
  uint64_t read_count_ = 0;
  RecordSpan last_span_;
};

// Convenience helpers for the common whole-file cases.
std::vector<KvRecord> read_kv_run(const std::filesystem::path& path);
std::vector<DeltaRecord> read_delta_run(const std::filesystem::path& path);
std::vector<MRBGEdge> read_edge_run(const std::filesystem::path& path);

void write_kv_run(const std::filesystem::path& path, const std::vector<KvRecord>& records);
void write_delta_run(const std::filesystem::path& path, const std::vector<DeltaRecord>& records);
void write_edge_run(const std::filesystem::path& path, const std::vector<MRBGEdge>& records);

// Lists the run files in a directory in filename order; the index of a file
// in this list is its partition id for MapKey purposes.
std::vector<std::filesystem::path> list_run_files(const std::filesystem::path& dir);

}  // namespace imr
