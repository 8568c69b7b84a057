#include "imr/records.hpp"

#include <limits>

namespace imr {

namespace {

constexpr uint32_t kMaxLen = std::numeric_limits<uint32_t>::max();

void check_len(size_t n, const char* what) {
  if (n > kMaxLen) {
    throw_error(ErrorCode::kEncodingLimit, std::string(what) + " exceeds u32 length limit");
  }
}

void append_lp(std::string& out, const std::string& s) {
  append_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

// Cursor over one frame payload; all reads bounds-checked against the
// payload end so a bad inner length cannot escape the frame.
struct PayloadCursor {
  std::string_view buf;
  size_t pos;
  size_t end;
  size_t frame_off;  // for error messages

  void need(size_t n) {
    if (pos + n > end) {
      throw_error(ErrorCode::kCorruptFrame,
                  "truncated frame payload at offset " + std::to_string(frame_off));
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v = read_u32(buf, pos);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = read_u64(buf, pos);
    pos += 8;
    return v;
  }
  char byte() {
    need(1);
    return buf[pos++];
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(buf.substr(pos, n));
    pos += n;
    return s;
  }
  void done() {
    if (pos != end) {
      throw_error(ErrorCode::kCorruptFrame,
                  "trailing bytes in frame at offset " + std::to_string(frame_off));
    }
  }
};

// Validates the outer length prefix and returns a cursor over the payload.
PayloadCursor open_frame(std::string_view buf, size_t off) {
  if (off + 4 > buf.size()) {
    throw_error(ErrorCode::kCorruptFrame,
                "truncated frame header at offset " + std::to_string(off));
  }
  uint32_t len = read_u32(buf, off);
  if (off + 4 + len > buf.size()) {
    throw_error(ErrorCode::kCorruptFrame,
                "frame length overruns buffer at offset " + std::to_string(off));
  }
  return PayloadCursor{buf, off + 4, off + 4 + len, off};
}

std::string seal_frame(const std::string& payload) {
  check_len(payload.size(), "frame payload");
  std::string out;
  out.reserve(payload.size() + 4);
  append_u32(out, static_cast<uint32_t>(payload.size()));
  out += payload;
  return out;
}

}  // namespace

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kCorruptFrame: return "corrupt frame";
    case ErrorCode::kSortViolation: return "sort violation";
    case ErrorCode::kEncodingLimit: return "encoding limit";
    case ErrorCode::kContractViolation: return "contract violation";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kTaskFailed: return "task failed";
    case ErrorCode::kStateMismatch: return "state mismatch";
    case ErrorCode::kChecksum: return "checksum mismatch";
  }
  return "unknown error";
}

std::string encode_record(const KvRecord& r) {
  check_len(r.key.size(), "key");
  check_len(r.value.size(), "value");
  std::string payload;
  payload.reserve(r.key.size() + r.value.size() + 8);
  append_lp(payload, r.key);
  append_lp(payload, r.value);
  return seal_frame(payload);
}

size_t decode_record(std::string_view buf, size_t off, KvRecord* out) {
  PayloadCursor c = open_frame(buf, off);
  out->key = c.str();
  out->value = c.str();
  c.done();
  return c.end;
}

std::string encode_record(const DeltaRecord& r) {
  check_len(r.key.size(), "key");
  check_len(r.value.size(), "value");
  std::string payload;
  payload.reserve(r.key.size() + r.value.size() + 21);
  payload.push_back(static_cast<char>(r.sign));
  append_u32(payload, r.origin.partition);
  append_u64(payload, r.origin.sequence);
  append_lp(payload, r.key);
  append_lp(payload, r.value);
  return seal_frame(payload);
}

size_t decode_record(std::string_view buf, size_t off, DeltaRecord* out) {
  PayloadCursor c = open_frame(buf, off);
  char sign = c.byte();
  if (sign != '+' && sign != '-') {
    throw_error(ErrorCode::kCorruptFrame,
                "bad delta sign byte at offset " + std::to_string(off));
  }
  out->sign = static_cast<DeltaSign>(sign);
  out->origin.partition = c.u32();
  out->origin.sequence = c.u64();
  out->key = c.str();
  out->value = c.str();
  c.done();
  return c.end;
}

std::string encode_record(const MRBGEdge& r) {
  check_len(r.k2.size(), "k2");
  check_len(r.v2.size(), "v2");
  std::string payload;
  payload.reserve(r.k2.size() + r.v2.size() + 21);
  payload.push_back(r.tombstone ? '-' : '+');
  append_u32(payload, r.mk.partition);
  append_u64(payload, r.mk.sequence);
  append_lp(payload, r.k2);
  if (!r.tombstone) append_lp(payload, r.v2);
  return seal_frame(payload);
}

size_t decode_record(std::string_view buf, size_t off, MRBGEdge* out) {
  PayloadCursor c = open_frame(buf, off);
  char flag = c.byte();
  if (flag != '+' && flag != '-') {
    throw_error(ErrorCode::kCorruptFrame,
                "bad edge flag byte at offset " + std::to_string(off));
  }
  out->tombstone = (flag == '-');
  out->mk.partition = c.u32();
  out->mk.sequence = c.u64();
  out->k2 = c.str();
  out->v2.clear();
  if (!out->tombstone) out->v2 = c.str();
  c.done();
  return c.end;
}

}  // namespace imr
