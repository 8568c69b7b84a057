#include "imr/run_file.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace imr {

namespace fs = std::filesystem;

namespace {

constexpr size_t kReadBufBytes = 64 * 1024;

std::string header_bytes(const RunHeader& h) {
  std::string out;
  out.append(kRunMagic, 4);
  append_u32(out, h.version);
  out.push_back(static_cast<char>(h.kind));
  append_u64(out, h.record_count);
  append_u64(out, h.batch_id);
  return out;
}

RunHeader parse_header(std::string_view buf, const fs::path& path) {
  if (buf.size() < kRunHeaderBytes) {
    throw_error(ErrorCode::kCorruptFrame, "run file too short: " + path.string());
  }
  if (std::memcmp(buf.data(), kRunMagic, 4) != 0) {
    throw_error(ErrorCode::kCorruptFrame, "bad run magic in " + path.string());
  }
  RunHeader h;
  h.version = read_u32(buf, 4);
  if (h.version != kRunVersion) {
    throw_error(ErrorCode::kCorruptFrame, "unsupported run version in " + path.string());
  }
  uint8_t kind = static_cast<uint8_t>(buf[8]);
  if (kind > 2) {
    throw_error(ErrorCode::kCorruptFrame, "bad record kind in " + path.string());
  }
  h.kind = static_cast<RecordKind>(kind);
  h.record_count = read_u64(buf, 9);
  h.batch_id = read_u64(buf, 17);
  return h;
}

[[noreturn]] void io_fail(const char* op, const fs::path& path) {
  throw_error(ErrorCode::kIo, std::string(op) + " failed for " + path.string() + ": " +
                                  std::strerror(errno));
}

}  // namespace

SortedRunWriter::SortedRunWriter(const fs::path& path, RecordKind kind, uint64_t batch_id)
    : path_(path), kind_(kind) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) io_fail("open", path);
  RunHeader h;
  h.kind = kind;
  h.batch_id = batch_id;
  std::string hb = header_bytes(h);
  if (std::fwrite(hb.data(), 1, hb.size(), file_) != hb.size()) io_fail("write", path);
  offset_ = hb.size();
}

SortedRunWriter::~SortedRunWriter() {
  if (file_) std::fclose(file_);
}

void SortedRunWriter::write_frame(const std::string& frame) {
  if (std::fwrite(frame.data(), 1, frame.size(), file_) != frame.size()) io_fail("write", path_);
  offset_ += frame.size();
  count_++;
}

void SortedRunWriter::add(const KvRecord& r) {
  if (kind_ != RecordKind::kKv) {
    throw_error(ErrorCode::kContractViolation, "kv record written to non-kv run");
  }
  if (have_last_ && r.key < last_key_) {
    throw_error(ErrorCode::kSortViolation,
                "kv record out of order at index " + std::to_string(count_) + " in " +
                    path_.string());
  }
  last_key_ = r.key;
  have_last_ = true;
  write_frame(encode_record(r));
}

void SortedRunWriter::add(const DeltaRecord& r) {
  if (kind_ != RecordKind::kDelta) {
    throw_error(ErrorCode::kContractViolation, "delta record written to non-delta run");
  }
  if (have_last_ && r.key < last_key_) {
    throw_error(ErrorCode::kSortViolation,
                "delta record out of order at index " + std::to_string(count_) + " in " +
                    path_.string());
  }
  last_key_ = r.key;
  have_last_ = true;
  write_frame(encode_record(r));
}

void SortedRunWriter::add(const MRBGEdge& r) {
  if (kind_ != RecordKind::kEdge) {
    throw_error(ErrorCode::kContractViolation, "edge record written to non-edge run");
  }
  if (have_last_) {
    bool ok = last_key_ < r.k2 ||
              (last_key_ == r.k2 &&
               (last_mk_ < r.mk || (last_mk_ == r.mk && last_rank_ <= edge_tomb_rank(r))));
    if (!ok) {
      throw_error(ErrorCode::kSortViolation,
                  "edge out of order at index " + std::to_string(count_) + " in " +
                      path_.string());
    }
  }
  last_key_ = r.k2;
  last_mk_ = r.mk;
  last_rank_ = edge_tomb_rank(r);
  have_last_ = true;
  write_frame(encode_record(r));
}

uint64_t SortedRunWriter::close() {
  if (closed_) return count_;
  closed_ = true;
  // Patch the record count now that it is known.
  if (std::fseek(file_, 9, SEEK_SET) != 0) io_fail("seek", path_);
  std::string cnt;
  append_u64(cnt, count_);
  if (std::fwrite(cnt.data(), 1, cnt.size(), file_) != cnt.size()) io_fail("write", path_);
  if (std::fflush(file_) != 0) io_fail("flush", path_);
  std::fclose(file_);
  file_ = nullptr;
  return count_;
}

SortedRunReader::SortedRunReader(const fs::path& path) : path_(path) {
  file_ = std::fopen(path.c_str(), "rb");
  if (!file_) io_fail("open", path);
  char hb[kRunHeaderBytes];
  size_t got = std::fread(hb, 1, sizeof hb, file_);
  header_ = parse_header(std::string_view(hb, got), path);
  buf_file_off_ = kRunHeaderBytes;
  next_read_off_ = kRunHeaderBytes;
}

SortedRunReader::~SortedRunReader() {
  if (file_) std::fclose(file_);
}

SortedRunReader::SortedRunReader(SortedRunReader&& other) noexcept
    : path_(std::move(other.path_)),
      file_(other.file_),
      header_(other.header_),
      buf_(std::move(other.buf_)),
      buf_pos_(other.buf_pos_),
      buf_file_off_(other.buf_file_off_),
      next_read_off_(other.next_read_off_),
      read_count_(other.read_count_),
      last_span_(other.last_span_) {
  other.file_ = nullptr;
}

// Ensures at least `need` unconsumed bytes are buffered; returns false on a
// clean end-of-file with zero unconsumed bytes.
bool SortedRunReader::fill_to(size_t need) {
  size_t avail = buf_.size() - buf_pos_;
  while (avail < need) {
    if (buf_pos_ > 0) {
      buf_.erase(0, buf_pos_);
      buf_file_off_ += buf_pos_;
      buf_pos_ = 0;
    }
    size_t want = std::max(need - avail, kReadBufBytes);
    size_t old = buf_.size();
    buf_.resize(old + want);
    if (std::fseek(file_, static_cast<long>(next_read_off_), SEEK_SET) != 0) {
      io_fail("seek", path_);
    }
    size_t got = std::fread(buf_.data() + old, 1, want, file_);
    buf_.resize(old + got);
    next_read_off_ += got;
    if (got == 0) {
      if (avail == 0) return false;
      throw_error(ErrorCode::kCorruptFrame,
                  "truncated frame at offset " + std::to_string(buf_file_off_ + buf_pos_) +
                      " in " + path_.string());
    }
    avail = buf_.size() - buf_pos_;
  }
  return true;
}

template <typename T>
bool SortedRunReader::next_impl(T* out, RecordKind expect) {
  if (header_.kind != expect) {
    throw_error(ErrorCode::kContractViolation,
                "record kind mismatch reading " + path_.string());
  }
  if (!fill_to(4)) {
    if (read_count_ != header_.record_count) {
      throw_error(ErrorCode::kCorruptFrame,
                  "record count mismatch in " + path_.string() + ": header says " +
                      std::to_string(header_.record_count) + ", read " +
                      std::to_string(read_count_));
    }
    return false;
  }
  uint32_t len = read_u32(buf_, buf_pos_);
  fill_to(4 + static_cast<size_t>(len));
  size_t end = decode_record(std::string_view(buf_), buf_pos_, out);
  last_span_ = RecordSpan{buf_file_off_ + buf_pos_, static_cast<uint32_t>(end - buf_pos_)};
  buf_pos_ = end;
  read_count_++;
  return true;
}

bool SortedRunReader::next(KvRecord* out) { return next_impl(out, RecordKind::kKv); }
bool SortedRunReader::next(DeltaRecord* out) { return next_impl(out, RecordKind::kDelta); }
bool SortedRunReader::next(MRBGEdge* out) { return next_impl(out, RecordKind::kEdge); }

std::string SortedRunReader::read_span(RecordSpan span) {
  std::string raw(span.length, '\0');
  if (std::fseek(file_, static_cast<long>(span.offset), SEEK_SET) != 0) io_fail("seek", path_);
  if (std::fread(raw.data(), 1, raw.size(), file_) != raw.size()) {
    throw_error(ErrorCode::kCorruptFrame,
                "positioned read past end at offset " + std::to_string(span.offset) + " in " +
                    path_.string());
  }
  // The sequential cursor shares the FILE*; force its next refill to seek.
  return raw;
}

KvRecord SortedRunReader::read_kv_at(RecordSpan span) {
  std::string raw = read_span(span);
  KvRecord r;
  decode_record(raw, 0, &r);
  return r;
}

MRBGEdge SortedRunReader::read_edge_at(RecordSpan span) {
  std::string raw = read_span(span);
  MRBGEdge r;
  decode_record(raw, 0, &r);
  return r;
}

std::vector<KvRecord> read_kv_run(const fs::path& path) {
  SortedRunReader reader(path);
  std::vector<KvRecord> out;
  out.reserve(reader.header().record_count);
  KvRecord r;
  while (reader.next(&r)) out.push_back(r);
  return out;
}

std::vector<DeltaRecord> read_delta_run(const fs::path& path) {
  SortedRunReader reader(path);
  std::vector<DeltaRecord> out;
  out.reserve(reader.header().record_count);
  DeltaRecord r;
  while (reader.next(&r)) out.push_back(r);
  return out;
}

std::vector<MRBGEdge> read_edge_run(const fs::path& path) {
  SortedRunReader reader(path);
  std::vector<MRBGEdge> out;
  out.reserve(reader.header().record_count);
  MRBGEdge r;
  while (reader.next(&r)) out.push_back(r);
  return out;
}

void write_kv_run(const fs::path& path, const std::vector<KvRecord>& records) {
  SortedRunWriter w(path, RecordKind::kKv);
  for (const auto& r : records) w.add(r);
  w.close();
}

void write_delta_run(const fs::path& path, const std::vector<DeltaRecord>& records) {
  SortedRunWriter w(path, RecordKind::kDelta);
  for (const auto& r : records) w.add(r);
  w.close();
}

void write_edge_run(const fs::path& path, const std::vector<MRBGEdge>& records) {
  SortedRunWriter w(path, RecordKind::kEdge);
  for (const auto& r : records) w.add(r);
  w.close();
}

std::vector<fs::path> list_run_files(const fs::path& dir) {
  if (!fs::exists(dir)) {
    throw_error(ErrorCode::kNotFound, "input directory missing: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".run") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace imr
