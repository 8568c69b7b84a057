#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "imr/iterative.hpp"
#include "imr/mrbg_store.hpp"
#include "imr/result_store.hpp"
#include "iter_internal.hpp"

// Delta-driven continuation of an iterative job. Iteration 1 turns the
// signed structure delta into edge tombstones and inserts; iterations 2+
// turn the previous iteration's state changes into replayed contributions.
// Either way only the touched reduce groups re-run, against their stored
// chunks. Contribution key sets must not depend on the joined state value
// (values may); apps that violate this, like nearest-centroid assignment,
// run in replicated mode where the graph is rebuilt after any state motion.

namespace imr {

namespace fs = std::filesystem;
using internal::IterContext;
using internal::MapPhaseOut;

namespace {

struct DeltaIterStats {
  uint64_t map_invocations = 0;
  uint64_t affected_keys = 0;
  uint64_t reduce_invocations = 0;
  uint64_t emitted = 0;
  uint64_t suppressed = 0;
  uint64_t tombstones_ignored = 0;
  uint64_t edges_replaced = 0;
  uint64_t retractions = 0;
  uint64_t shuffle_bytes = 0;
  uint64_t state_keys = 0;
  double l1 = 0.0;
};

int delta_sign_rank(DeltaSign s) { return s == DeltaSign::kDelete ? 0 : 1; }

// One map invocation's emissions as a key → value map; duplicate
// contribution keys within an invocation are a contract violation.
std::map<std::string, std::string> collect_map(const IterativeApp& app, const std::string& sk,
                                               const std::string& sv, const std::string& pk,
                                               const std::string& dv) {
  std::map<std::string, std::string> out;
  app.map(sk, sv, pk, dv, [&](const std::string& k2, const std::string& v2) {
    if (!out.emplace(k2, v2).second) {
      throw_error(ErrorCode::kContractViolation,
                  "map invocation emitted duplicate contribution key '" + k2 + "'");
    }
  });
  return out;
}

fs::path struct_update_path(const Workdir& wd, int p) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "it0001_struct_%05d.run", p);
  return wd.tmp_dir() / buf;
}

void apply_delta_edges(Chunk* chunk, const std::vector<MRBGEdge>& edges, DeltaIterStats* st) {
  for (const auto& e : edges) {
    auto it = std::lower_bound(
        chunk->edges.begin(), chunk->edges.end(), e.mk,
        [](const StoredEdge& s, const MapKey& mk) { return s.mk < mk; });
    bool found = it != chunk->edges.end() && it->mk == e.mk;
    if (e.tombstone) {
      if (found) {
        chunk->edges.erase(it);
      } else {
        st->tombstones_ignored++;
      }
    } else if (found) {
      it->v2 = e.v2;
      st->edges_replaced++;
    } else {
      chunk->edges.insert(it, StoredEdge{e.mk, e.v2});
    }
  }
}

struct PartitionedStructure {
  // (pk, sk) → record, mirroring structure.run order.
  std::map<std::pair<std::string, std::string>, StructureRecord> records;
  std::unordered_map<std::string, std::string> sk_to_pk;
};

PartitionedStructure load_structure(const fs::path& path) {
  PartitionedStructure out;
  if (!fs::exists(path)) return out;
  for (const auto& raw : read_kv_run(path)) {
    StructureRecord sr = decode_structure_value(raw.key, raw.value);
    out.sk_to_pk[sr.sk] = sr.pk;
    out.records.emplace(std::make_pair(sr.pk, sr.sk), std::move(sr));
  }
  return out;
}

void write_structure(const fs::path& path, const PartitionedStructure& s) {
  fs::path tmp = path;
  tmp += ".new";
  SortedRunWriter w(tmp, RecordKind::kKv);
  for (const auto& [key, sr] : s.records) w.add(KvRecord{sr.pk, encode_structure_value(sr)});
  w.close();
  fs::rename(tmp, path);
}

std::map<std::string, std::string> load_state_map(const fs::path& path) {
  std::map<std::string, std::string> out;
  for (const auto& r : load_state_file(path)) out[r.key] = r.value;
  return out;
}

// Iteration 1 map phase: replay deleted records into tombstones, run
// inserted records with freshly minted invocation ids, and stage the
// updated structure file for the reduce phase to install.
MapPhaseOut run_structure_delta_map(IterContext& ctx,
                                    const std::vector<std::vector<DeltaRecord>>& deltas,
                                    const std::vector<uint64_t>& seq_base,
                                    std::vector<uint64_t>* seq_end, DeltaIterStats* agg) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  MapPhaseOut out;
  out.spills.resize(n);
  std::vector<uint64_t> bytes(n, 0);
  std::vector<uint64_t> inv(n, 0);
  seq_end->assign(n, 0);

  auto task = [&](int p, int attempt) {
    if (ctx.failures && attempt == 0 &&
        ctx.failures->should_fail(FailureKind::kPrimeMap, 1, p, FailureTrigger::kStart)) {
      throw SimulatedFailure{"delta map task died at start"};
    }
    char tag[96];
    std::snprintf(tag, sizeof tag, "it0001_dmap%05d_a%d", p, attempt);
    ShuffleSink sink(ctx.wd.tmp_dir(), tag, n, ctx.spec.spill_budget_bytes);

    PartitionedStructure structs = load_structure(ctx.wd.structure_run(p));
    std::map<std::string, std::string> state = load_state_map(ctx.wd.state_run(p));
    uint64_t seq = seq_base[p];
    inv[p] = 0;

    uint64_t done = 0;
    uint64_t mid_at = deltas[p].size() / 2;
    for (const auto& d : deltas[p]) {
      if (ctx.failures && attempt == 0 && done == mid_at &&
          ctx.failures->should_fail(FailureKind::kPrimeMap, 1, p, FailureTrigger::kMid)) {
        throw SimulatedFailure{"delta map task died mid-stream"};
      }
      done++;
      if (d.sign == DeltaSign::kDelete) {
        auto it = structs.sk_to_pk.find(d.key);
        if (it == structs.sk_to_pk.end()) {
          throw_error(ErrorCode::kContractViolation,
                      "structure delete of unknown key '" + d.key + "'");
        }
        std::string pk = it->second;
        const StructureRecord& sr = structs.records.at({pk, d.key});
        auto sit = state.find(pk);
        std::string dv = sit != state.end() ? sit->second : ctx.app.init(pk);
        for (const auto& [k2, v2] : collect_map(ctx.app, sr.sk, sr.sv, pk, dv)) {
          sink.emit(MRBGEdge{k2, sr.mk, "", true});
        }
        inv[p]++;
        structs.records.erase({pk, d.key});
        structs.sk_to_pk.erase(it);
      } else {
        if (structs.sk_to_pk.count(d.key)) {
          throw_error(ErrorCode::kContractViolation,
                      "structure insert duplicates existing key '" + d.key + "'");
        }
        StructureRecord sr;
        sr.sk = d.key;
        sr.sv = d.value;
        sr.pk = ctx.app.project(d.key);
        sr.mk = MapKey{kInsertPartitionBase + static_cast<uint32_t>(p), seq++};
        if (!ctx.app.replicated_state && !state.count(sr.pk)) {
          // First record feeding a brand-new state key: seed it with an
          // identity contribution so the reduce side learns about it.
          std::string dv0 = ctx.app.init(sr.pk);
          state[sr.pk] = dv0;
          sink.emit(MRBGEdge{sr.pk, identity_map_key(), dv0, false});
        }
        auto sit = state.find(sr.pk);
        std::string dv = sit != state.end() ? sit->second : ctx.app.init(sr.pk);
        for (const auto& [k2, v2] : collect_map(ctx.app, sr.sk, sr.sv, sr.pk, dv)) {
          sink.emit(MRBGEdge{k2, sr.mk, v2, false});
        }
        inv[p]++;
        structs.sk_to_pk[sr.sk] = sr.pk;
        structs.records.emplace(std::make_pair(sr.pk, sr.sk), std::move(sr));
      }
    }
    sink.finish();
    if (!deltas[p].empty()) write_structure(struct_update_path(ctx.wd, p), structs);
    out.spills[p] = sink.spills();
    bytes[p] = sink.bytes_emitted();
    (*seq_end)[p] = seq;
  };

  internal::run_partition_phase(ctx, 1, FailureKind::kPrimeMap, task);
  for (uint32_t p = 0; p < n; p++) {
    out.shuffle_bytes += bytes[p];
    agg->map_invocations += inv[p];
  }
  agg->shuffle_bytes += out.shuffle_bytes;
  return out;
}

// Iteration j ≥ 2 map phase: each previously emitted state change becomes
// an identity replacement, and every structure record depending on it
// replays — old value's emissions minus new value's keep their tombstones,
// new emissions land as inserts.
MapPhaseOut run_state_delta_map(IterContext& ctx, int iteration, DeltaIterStats* agg) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  MapPhaseOut out;
  out.spills.resize(n);
  std::vector<uint64_t> bytes(n, 0);
  std::vector<uint64_t> inv(n, 0);

  auto task = [&](int p, int attempt) {
    if (ctx.failures && attempt == 0 &&
        ctx.failures->should_fail(FailureKind::kPrimeMap, iteration, p, FailureTrigger::kStart)) {
      throw SimulatedFailure{"delta map task died at start"};
    }
    char tag[96];
    std::snprintf(tag, sizeof tag, "it%04d_dmap%05d_a%d", iteration, p, attempt);
    ShuffleSink sink(ctx.wd.tmp_dir(), tag, n, ctx.spec.spill_budget_bytes);
    inv[p] = 0;

    std::vector<DeltaStateRecord> dd;
    for (const auto& r : load_state_file(ctx.wd.delta_state_run(p))) {
      dd.push_back(decode_delta_state_value(r.key, r.value));
    }
    for (const auto& d : dd) {
      sink.emit(MRBGEdge{d.dk, identity_map_key(), d.dv_new, false});
    }

    uint64_t total = 0;
    if (fs::exists(ctx.wd.structure_run(p))) {
      SortedRunReader counter(ctx.wd.structure_run(p));
      total = counter.header().record_count;
    }
    uint64_t mid_at = total / 2;
    uint64_t done = 0;
    if (total > 0 && !dd.empty()) {
      SortedRunReader reader(ctx.wd.structure_run(p));
      KvRecord raw;
      size_t di = 0;
      while (reader.next(&raw)) {
        if (ctx.failures && attempt == 0 && done == mid_at &&
            ctx.failures->should_fail(FailureKind::kPrimeMap, iteration, p,
                                      FailureTrigger::kMid)) {
          throw SimulatedFailure{"delta map task died mid-stream"};
        }
        done++;
        while (di < dd.size() && dd[di].dk < raw.key) di++;
        if (di >= dd.size()) break;
        if (dd[di].dk != raw.key) continue;
        StructureRecord sr = decode_structure_value(raw.key, raw.value);
        auto old_emit = collect_map(ctx.app, sr.sk, sr.sv, sr.pk, dd[di].dv_prev);
        auto new_emit = collect_map(ctx.app, sr.sk, sr.sv, sr.pk, dd[di].dv_new);
        inv[p] += 2;
        for (const auto& [k2, v2] : old_emit) {
          if (!new_emit.count(k2)) sink.emit(MRBGEdge{k2, sr.mk, "", true});
        }
        for (const auto& [k2, v2] : new_emit) {
          sink.emit(MRBGEdge{k2, sr.mk, v2, false});
        }
      }
    }
    sink.finish();
    out.spills[p] = sink.spills();
    bytes[p] = sink.bytes_emitted();
  };

  internal::run_partition_phase(ctx, iteration, FailureKind::kPrimeMap, task);
  for (uint32_t p = 0; p < n; p++) {
    out.shuffle_bytes += bytes[p];
    agg->map_invocations += inv[p];
  }
  agg->shuffle_bytes += out.shuffle_bytes;
  return out;
}

void add_store_counters(Metrics& metrics, const StoreCounters& sc) {
  metrics.add("store_queries", sc.queries);
  metrics.add("store_reads_issued", sc.reads_issued);
  metrics.add("store_bytes_read", sc.bytes_read);
  metrics.add("store_window_hits", sc.window_hits);
  metrics.add("store_chunks_appended", sc.chunks_appended);
}

// Co-partitioned reduce phase: merge the delta edges into each affected
// key's stored chunk, re-reduce it, filter the change, and persist the new
// chunk plus the partition's state / change / filter files.
void run_selective_reduce(IterContext& ctx, int iteration, const MapPhaseOut& mapped,
                          DeltaIterStats* agg) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  std::vector<DeltaIterStats> per(n);

  auto task = [&](int p, int attempt) {
    if (ctx.failures && attempt == 0 &&
        ctx.failures->should_fail(FailureKind::kPrimeReduce, iteration, p,
                                  FailureTrigger::kStart)) {
      throw SimulatedFailure{"selective reduce task died at start"};
    }
    per[p] = DeltaIterStats{};
    DeltaIterStats& st = per[p];

    if (iteration == 1 && fs::exists(struct_update_path(ctx.wd, p))) {
      fs::path tmp = ctx.wd.structure_run(p);
      tmp += ".new";
      fs::copy_file(struct_update_path(ctx.wd, p), tmp, fs::copy_options::overwrite_existing);
      fs::rename(tmp, ctx.wd.structure_run(p));
    }

    std::vector<fs::path> runs = internal::spills_for(mapped, p);
    std::vector<std::string> keys;
    {
      EdgeMerger merger(runs);
      GroupCursor groups(merger);
      std::string k2;
      std::vector<MRBGEdge> edges;
      while (groups.next_group(&k2, &edges)) keys.push_back(k2);
    }

    std::map<std::string, std::string> state = load_state_map(ctx.wd.state_run(p));
    std::map<std::string, CpcEntry> cpc;
    if (ctx.spec.cpc_enabled) {
      for (const auto& r : load_state_file(ctx.wd.cpc_run(p))) {
        cpc.emplace(r.key, decode_cpc_value(r.key, r.value));
      }
    }

    MrbgStore store(ctx.wd.partition_dir(p), ctx.store_options());
    auto pass = store.begin_query_pass(keys);
    store.begin_append_batch();

    std::vector<KvRecord> dd_out;
    size_t gi = 0;
    EdgeMerger merger(runs);
    GroupCursor groups(merger);
    std::string k2;
    std::vector<MRBGEdge> edges;
    while (groups.next_group(&k2, &edges)) {
      if (ctx.failures && attempt == 0 && gi == keys.size() / 2 &&
          ctx.failures->should_fail(FailureKind::kPrimeReduce, iteration, p,
                                    FailureTrigger::kMid)) {
        throw SimulatedFailure{"selective reduce task died mid-stream"};
      }
      gi++;
      Chunk chunk = pass.get(k2).value_or(Chunk{k2, {}});
      apply_delta_edges(&chunk, edges, &st);

      std::string prior;
      if (!chunk.edges.empty() && internal::is_identity(chunk.edges.back())) {
        prior = chunk.edges.back().v2;
      } else {
        auto sit = state.find(k2);
        prior = sit != state.end() ? sit->second : ctx.app.init(k2);
        chunk.edges.push_back(StoredEdge{identity_map_key(), prior});
      }
      state.try_emplace(k2, prior);

      std::vector<std::string> values;
      for (const auto& e : chunk.edges) {
        if (!internal::is_identity(e)) values.push_back(e.v2);
      }
      std::string next = ctx.app.reduce(k2, prior, values);
      st.reduce_invocations++;
      double moved = ctx.app.difference(next, prior);

      bool emit;
      if (ctx.spec.cpc_enabled) {
        auto [cit, fresh] = cpc.try_emplace(k2, CpcEntry{k2, 0.0, prior});
        CpcEntry& e = cit->second;
        e.accumulated += ctx.app.difference(next, e.last_computed);
        e.last_computed = next;
        emit = e.accumulated > ctx.spec.filter_thresh;
        if (emit) e.accumulated = 0.0;
        (void)fresh;
      } else {
        emit = moved > ctx.spec.filter_thresh;
      }
      if (emit) {
        dd_out.push_back(KvRecord{k2, encode_delta_state_value({k2, next, prior})});
        state[k2] = next;
        st.emitted++;
        st.l1 += moved;
      } else if (moved > 0) {
        st.suppressed++;
      }

      store.append_chunk(chunk);
      st.affected_keys++;
    }
    store.seal_batch();
    add_store_counters(ctx.metrics, store.counters());

    write_state_file_atomic(ctx.wd.delta_state_run(p), dd_out);
    std::vector<KvRecord> state_out;
    for (const auto& [k, v] : state) state_out.push_back(KvRecord{k, v});
    write_state_file_atomic(ctx.wd.state_run(p), state_out);
    if (ctx.spec.cpc_enabled) {
      std::vector<KvRecord> cpc_out;
      for (const auto& [k, e] : cpc) cpc_out.push_back(KvRecord{k, encode_cpc_value(e)});
      write_state_file_atomic(ctx.wd.cpc_run(p), cpc_out);
    }
    st.state_keys = state.size();
  };

  internal::run_partition_phase(ctx, iteration, FailureKind::kPrimeReduce, task);
  for (uint32_t p = 0; p < n; p++) {
    const DeltaIterStats& st = per[p];
    agg->affected_keys += st.affected_keys;
    agg->reduce_invocations += st.reduce_invocations;
    agg->emitted += st.emitted;
    agg->suppressed += st.suppressed;
    agg->tombstones_ignored += st.tombstones_ignored;
    agg->edges_replaced += st.edges_replaced;
    agg->state_keys += st.state_keys;
    agg->l1 += st.l1;
  }
}

// Replicated-mode reduce phase: patch chunks and the per-partition result
// store; the driver assembles the global state afterwards.
void run_selective_reduce_replicated(IterContext& ctx, int iteration, const MapPhaseOut& mapped,
                                     DeltaIterStats* agg) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  std::vector<DeltaIterStats> per(n);

  auto task = [&](int p, int attempt) {
    if (ctx.failures && attempt == 0 &&
        ctx.failures->should_fail(FailureKind::kPrimeReduce, iteration, p,
                                  FailureTrigger::kStart)) {
      throw SimulatedFailure{"selective reduce task died at start"};
    }
    per[p] = DeltaIterStats{};
    DeltaIterStats& st = per[p];

    if (iteration == 1 && fs::exists(struct_update_path(ctx.wd, p))) {
      fs::path tmp = ctx.wd.structure_run(p);
      tmp += ".new";
      fs::copy_file(struct_update_path(ctx.wd, p), tmp, fs::copy_options::overwrite_existing);
      fs::rename(tmp, ctx.wd.structure_run(p));
    }

    std::vector<fs::path> runs = internal::spills_for(mapped, p);
    std::vector<std::string> keys;
    {
      EdgeMerger merger(runs);
      GroupCursor groups(merger);
      std::string k2;
      std::vector<MRBGEdge> edges;
      while (groups.next_group(&k2, &edges)) keys.push_back(k2);
    }

    MrbgStore store(ctx.wd.partition_dir(p), ctx.store_options());
    auto pass = store.begin_query_pass(keys);
    store.begin_append_batch();
    ResultStore results(ctx.wd.partition_dir(p));
    std::map<std::string, std::optional<ReduceOutputs>> updates;

    size_t gi = 0;
    EdgeMerger merger(runs);
    GroupCursor groups(merger);
    std::string k2;
    std::vector<MRBGEdge> edges;
    while (groups.next_group(&k2, &edges)) {
      if (ctx.failures && attempt == 0 && gi == keys.size() / 2 &&
          ctx.failures->should_fail(FailureKind::kPrimeReduce, iteration, p,
                                    FailureTrigger::kMid)) {
        throw SimulatedFailure{"selective reduce task died mid-stream"};
      }
      gi++;
      Chunk chunk = pass.get(k2).value_or(Chunk{k2, {}});
      apply_delta_edges(&chunk, edges, &st);
      if (chunk.edges.empty()) {
        store.drop_key(k2);
        updates[k2] = std::nullopt;
        st.retractions++;
      } else {
        std::vector<std::string> values;
        for (const auto& e : chunk.edges) values.push_back(e.v2);
        updates[k2] = ReduceOutputs{KvRecord{k2, ctx.app.reduce(k2, "", values)}};
        st.reduce_invocations++;
        store.append_chunk(chunk);
      }
      st.affected_keys++;
    }
    store.seal_batch();
    add_store_counters(ctx.metrics, store.counters());
    results.patch(updates);
  };

  internal::run_partition_phase(ctx, iteration, FailureKind::kPrimeReduce, task);
  for (uint32_t p = 0; p < n; p++) {
    const DeltaIterStats& st = per[p];
    agg->affected_keys += st.affected_keys;
    agg->reduce_invocations += st.reduce_invocations;
    agg->tombstones_ignored += st.tombstones_ignored;
    agg->edges_replaced += st.edges_replaced;
    agg->retractions += st.retractions;
  }
}

// Pulls every partition's stored reduce outputs and assembles the global
// state value; writes the new copy everywhere when it moved.
double assemble_from_result_stores(IterContext& ctx) {
  std::vector<KvRecord> outputs;
  for (int p = 0; p < ctx.spec.partitions; p++) {
    ResultStore results(ctx.wd.partition_dir(p));
    for (const auto& [k2, outs] : results.groups()) {
      for (const auto& kv : outs) outputs.push_back(kv);
    }
  }
  std::stable_sort(outputs.begin(), outputs.end(),
                   [](const KvRecord& a, const KvRecord& b) { return a.key < b.key; });

  std::vector<KvRecord> state = load_state_file(ctx.wd.state_run(0));
  if (state.size() != 1) {
    throw_error(ErrorCode::kContractViolation,
                "replicated mode expects exactly one state record, found " +
                    std::to_string(state.size()));
  }
  std::string prior = state[0].value;
  std::string next = ctx.app.assemble(prior, outputs);
  double l1 = ctx.app.difference(prior, next);
  if (l1 > 0) {
    std::vector<KvRecord> new_state{KvRecord{state[0].key, next}};
    uint64_t bytes = state[0].key.size() + next.size();
    for (int p = 0; p < ctx.spec.partitions; p++) {
      write_state_file_atomic(ctx.wd.state_run(p), new_state);
      ctx.metrics.add("replicated_state_bytes", bytes);
    }
  }
  return l1;
}

// Structure patch without any graph maintenance, for runs that keep the
// edge store disabled: apply the delta to structure/state files directly,
// then the driver falls through to full iterations.
void apply_structure_delta_plain(IterContext& ctx,
                                 const std::vector<std::vector<DeltaRecord>>& deltas,
                                 const std::vector<uint64_t>& seq_base,
                                 std::vector<uint64_t>* seq_end) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  seq_end->assign(n, 0);
  auto task = [&](int p, int attempt) {
    (void)attempt;
    PartitionedStructure structs = load_structure(ctx.wd.structure_run(p));
    std::map<std::string, std::string> state = load_state_map(ctx.wd.state_run(p));
    uint64_t seq = seq_base[p];
    bool state_dirty = false;
    for (const auto& d : deltas[p]) {
      if (d.sign == DeltaSign::kDelete) {
        auto it = structs.sk_to_pk.find(d.key);
        if (it == structs.sk_to_pk.end()) {
          throw_error(ErrorCode::kContractViolation,
                      "structure delete of unknown key '" + d.key + "'");
        }
        structs.records.erase({it->second, d.key});
        structs.sk_to_pk.erase(it);
      } else {
        if (structs.sk_to_pk.count(d.key)) {
          throw_error(ErrorCode::kContractViolation,
                      "structure insert duplicates existing key '" + d.key + "'");
        }
        StructureRecord sr;
        sr.sk = d.key;
        sr.sv = d.value;
        sr.pk = ctx.app.project(d.key);
        sr.mk = MapKey{kInsertPartitionBase + static_cast<uint32_t>(p), seq++};
        if (!ctx.app.replicated_state && state.try_emplace(sr.pk, ctx.app.init(sr.pk)).second) {
          state_dirty = true;
        }
        structs.sk_to_pk[sr.sk] = sr.pk;
        structs.records.emplace(std::make_pair(sr.pk, sr.sk), std::move(sr));
      }
    }
    if (!deltas[p].empty()) write_structure(ctx.wd.structure_run(p), structs);
    if (state_dirty) {
      std::vector<KvRecord> state_out;
      for (const auto& [k, v] : state) state_out.push_back(KvRecord{k, v});
      write_state_file_atomic(ctx.wd.state_run(p), state_out);
    }
    (*seq_end)[p] = seq;
  };
  internal::run_partition_phase(ctx, 0, FailureKind::kPrimeMap, task);
}

// When the loop stops on tolerance with changes still queued, the stored
// identity contributions for those keys lag the visible state by one
// emission. Bring them in line so the snapshot is self-consistent.
void apply_identity_fixup(IterContext& ctx) {
  std::vector<std::function<void()>> tasks;
  std::vector<int> workers;
  for (int p = 0; p < ctx.spec.partitions; p++) {
    workers.push_back(ctx.sched.worker_for(p));
    tasks.push_back([&ctx, p] {
      std::vector<DeltaStateRecord> dd;
      for (const auto& r : load_state_file(ctx.wd.delta_state_run(p))) {
        dd.push_back(decode_delta_state_value(r.key, r.value));
      }
      if (dd.empty()) return;
      std::vector<std::string> keys;
      for (const auto& d : dd) keys.push_back(d.dk);
      MrbgStore store(ctx.wd.partition_dir(p), ctx.store_options());
      auto pass = store.begin_query_pass(keys);
      store.begin_append_batch();
      for (const auto& d : dd) {
        Chunk chunk = pass.get(d.dk).value_or(Chunk{d.dk, {}});
        if (!chunk.edges.empty() && internal::is_identity(chunk.edges.back())) {
          chunk.edges.back().v2 = d.dv_new;
        } else {
          chunk.edges.push_back(StoredEdge{identity_map_key(), d.dv_new});
        }
        store.append_chunk(chunk);
      }
      store.seal_batch();
      add_store_counters(ctx.metrics, store.counters());
    });
  }
  auto errors = ctx.pool.run_phase(workers, tasks);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

IterationOutcome run_incr_iterative_job(const JobSpec& spec, const IterativeApp& app,
                                        const std::vector<fs::path>& delta_structure_runs,
                                        const Workdir& wd, RunManifest* manifest,
                                        WorkerPool& pool, Metrics& metrics,
                                        FailurePlan* failures) {
  IterContext ctx(spec, app, wd, pool, metrics, failures);
  uint32_t n = static_cast<uint32_t>(spec.partitions);

  if (manifest->spec.partitions != spec.partitions) {
    throw_error(ErrorCode::kConfig, "partition count must match the snapshot's (" +
                                        std::to_string(manifest->spec.partitions) + ")");
  }
  if (spec.mrbg_enabled && !manifest->mrbg_valid) {
    throw_error(ErrorCode::kStateMismatch,
                "snapshot holds no valid edge graph; re-run the base job with the graph on");
  }
  manifest->previous_run_id = manifest->run_id;
  manifest->run_id = make_run_id(spec);
  manifest->spec = spec;
  if (manifest->insert_seq.size() != n) manifest->insert_seq.assign(n, 0);

  // Route the delta to partitions up front; tasks may re-run and need a
  // stable view. Deletes order before inserts of the same key, so an
  // update travels as delete + insert.
  Partitioner part{n};
  std::vector<std::vector<DeltaRecord>> deltas(n);
  uint64_t delta_records = 0;
  for (const auto& path : delta_structure_runs) {
    SortedRunReader reader(path);
    DeltaRecord d;
    while (reader.next(&d)) {
      uint32_t p = app.replicated_state ? part(d.key) : part(app.project(d.key));
      deltas[p].push_back(d);
      delta_records++;
    }
  }
  for (auto& list : deltas) {
    std::sort(list.begin(), list.end(), [](const DeltaRecord& a, const DeltaRecord& b) {
      if (a.key != b.key) return a.key < b.key;
      return delta_sign_rank(a.sign) < delta_sign_rank(b.sign);
    });
  }
  metrics.add("delta_structure_records", delta_records);

  internal::maybe_checkpoint(ctx, 0);

  IterationOutcome outcome;
  bool disabled = !spec.mrbg_enabled;
  bool replicated_moved = false;
  bool last_dd_nonempty = false;
  std::vector<uint64_t> seq_end;
  // Pinned before the loop: a checkpoint rollback may replay iteration 1,
  // and the re-minted insert ids must come out identical.
  const std::vector<uint64_t> insert_seq_base = manifest->insert_seq;
  if (disabled) {
    apply_structure_delta_plain(ctx, deltas, insert_seq_base, &seq_end);
    manifest->insert_seq = seq_end;
  }

  for (int it = 1; it <= spec.max_iters; it++) {
    double t0 = now_ms();
    it = internal::handle_worker_failure(ctx, it);
    IterationRow row;
    row.iteration = it;
    bool converged_now = false;

    if (disabled) {
      auto res = internal::run_full_iteration(ctx, it);
      row.l1_delta = res.l1;
      row.shuffle_bytes = res.shuffle_bytes;
      row.propagated_kv = res.state_records;
      row.p_delta = 1.0;
      row.mrbg_enabled = false;
      row.reduce_reexecuted = res.reduce_groups;
      outcome.final_l1 = res.l1;
      converged_now = res.l1 <= spec.tol;
      last_dd_nonempty = false;
      if (res.l1 > 0) replicated_moved = true;
    } else {
      DeltaIterStats st;
      MapPhaseOut mapped =
          it == 1 ? run_structure_delta_map(ctx, deltas, insert_seq_base, &seq_end, &st)
                  : run_state_delta_map(ctx, it, &st);
      if (app.replicated_state) {
        run_selective_reduce_replicated(ctx, it, mapped, &st);
        st.l1 = assemble_from_result_stores(ctx);
        st.emitted = st.l1 > 0 ? 1 : 0;
        st.state_keys = 1;
        if (st.l1 > 0) replicated_moved = true;
      } else {
        run_selective_reduce(ctx, it, mapped, &st);
      }
      if (it == 1) manifest->insert_seq = seq_end;
      ctx.wd.clear_tmp();

      metrics.add("delta_map_invocations", st.map_invocations);
      metrics.add("affected_reduce_keys", st.affected_keys);
      metrics.add("delta_reduce_invocations", st.reduce_invocations);
      metrics.add("filter_suppressed", st.suppressed);
      metrics.add("tombstones_ignored", st.tombstones_ignored);
      metrics.add("edges_replaced", st.edges_replaced);

      row.l1_delta = st.l1;
      row.shuffle_bytes = st.shuffle_bytes;
      row.propagated_kv = st.emitted;
      row.p_delta = st.state_keys ? static_cast<double>(st.emitted) / st.state_keys : 0.0;
      row.mrbg_enabled = true;
      row.reduce_reexecuted = st.affected_keys;
      outcome.final_l1 = st.l1;
      converged_now = st.emitted == 0 || st.l1 <= spec.tol;
      last_dd_nonempty = st.emitted > 0;

      if (!converged_now && row.p_delta > spec.auto_off_threshold) {
        disabled = true;
        outcome.mrbg_disabled = true;
        outcome.mrbg_disabled_at = it;
        metrics.event("mrbg_auto_off", {{"iteration", it}, {"p_delta", row.p_delta}});
      }
    }
    row.wall_ms = now_ms() - t0;
    metrics.iteration(row);
    internal::maybe_checkpoint(ctx, it);
    outcome.iterations = it;
    if (converged_now) {
      outcome.converged = true;
      break;
    }
  }

  // Leave the persisted graph consistent with the final visible state.
  if (disabled || (app.replicated_state && replicated_moved)) {
    for (int p = 0; p < spec.partitions; p++) {
      fs::remove(wd.cpc_run(p));
      fs::remove(wd.delta_state_run(p));
    }
    if (spec.mrbg_enabled) build_edge_graph(spec, app, wd, pool, metrics);
  } else if (last_dd_nonempty && !app.replicated_state) {
    apply_identity_fixup(ctx);
  }
  manifest->mrbg_valid = spec.mrbg_enabled;

  outcome.failures_recovered = ctx.failures_recovered;
  internal::export_state_output(ctx);
  manifest->iterations_run = outcome.iterations;
  manifest->converged = outcome.converged;
  manifest->counters = metrics.counters_json();
  manifest->save(wd.manifest_path());
  save_snapshot(wd, *manifest);
  return outcome;
}

}  // namespace imr
