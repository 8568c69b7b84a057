#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace imr {

enum class ErrorCode {
  kIo,
  kNotFound,
  kCorruptFrame,
  kSortViolation,
  kEncodingLimit,
  kContractViolation,
  kConfig,
  kTaskFailed,
  kStateMismatch,
  kChecksum,
};

const char* error_code_name(ErrorCode code);

// All runtime failures surface as ImrError; the code distinguishes the
// classes the callers (and tests) care about.
class ImrError : public std::runtime_error {
 public:
  ImrError(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_error(ErrorCode code, const std::string& msg) {
  throw ImrError(code, msg);
}

// 64-bit FNV-1a. Used for partitioning and for file digests; deterministic
// and endianness-free so alternate implementations can reproduce it.
inline uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Big-endian fixed-width integer append/read helpers shared by every codec.
inline void append_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline void append_u64(std::string& out, uint64_t v) {
  append_u32(out, static_cast<uint32_t>(v >> 32));
  append_u32(out, static_cast<uint32_t>(v & 0xffffffffull));
}

inline uint32_t read_u32(std::string_view buf, size_t off) {
  return (static_cast<uint32_t>(static_cast<unsigned char>(buf[off])) << 24) |
         (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 16) |
         (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 8) |
         static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 3]));
}

inline uint64_t read_u64(std::string_view buf, size_t off) {
  return (static_cast<uint64_t>(read_u32(buf, off)) << 32) | read_u32(buf, off + 4);
}

}  // namespace imr
