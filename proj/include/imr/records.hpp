#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "imr/common.hpp"

namespace imr {

// Globally unique id of one map invocation: which input run produced the
// record and the record's position inside it. Stable across re-runs, which
// is what lets a delta job name the exact edges an earlier job wrote.
struct MapKey {
  uint32_t partition = 0;
  uint64_t sequence = 0;

  auto operator<=>(const MapKey&) const = default;
};

// Reserved MapKey partition for runtime-generated state identity edges in
// iterative jobs; never collides with real input runs.
inline constexpr uint32_t kIdentityPartition = 0xffffffffu;

inline MapKey identity_map_key() { return MapKey{kIdentityPartition, 0}; }

struct KvRecord {
  std::string key;
  std::string value;

  bool operator==(const KvRecord&) const = default;
};

enum class DeltaSign : char { kInsert = '+', kDelete = '-' };

// Signed input change. `origin` pins the map invocation id this record had
// (deletes) or will have (inserts) so edge keys stay stable across jobs.
struct DeltaRecord {
  std::string key;
  std::string value;
  DeltaSign sign = DeltaSign::kInsert;
  MapKey origin;

  bool operator==(const DeltaRecord&) const = default;
};

// One intermediate edge: map invocation `mk` contributed `v2` to reduce key
// `k2`. A tombstone retracts a previously written edge and carries no value.
struct MRBGEdge {
  std::string k2;
  MapKey mk;
  std::string v2;
  bool tombstone = false;

  bool operator==(const MRBGEdge&) const = default;
};

// --- frame codecs ----------------------------------------------------------
//
// Every record is one length-prefixed frame: u32 payload length followed by
// the payload, all integers big-endian. Frames are self-delimiting so a run
// file is just a header plus concatenated frames.

std::string encode_record(const KvRecord& r);
std::string encode_record(const DeltaRecord& r);
std::string encode_record(const MRBGEdge& r);

// Each decode reads one frame at `off` and returns the offset just past it.
// Malformed input raises kCorruptFrame naming the offset.
size_t decode_record(std::string_view buf, size_t off, KvRecord* out);
size_t decode_record(std::string_view buf, size_t off, DeltaRecord* out);
size_t decode_record(std::string_view buf, size_t off, MRBGEdge* out);

// Sort rank used by run files and shuffle merges. Tombstones order before
// live edges with the same (k2, mk) so a retraction is applied before the
// replacing insert when both travel in one delta stream.
inline int edge_tomb_rank(const MRBGEdge& e) { return e.tombstone ? 0 : 1; }

inline bool edge_order_lt(const MRBGEdge& a, const MRBGEdge& b) {
  if (a.k2 != b.k2) return a.k2 < b.k2;
  if (a.mk != b.mk) return a.mk < b.mk;
  return edge_tomb_rank(a) < edge_tomb_rank(b);
}

}  // namespace imr
