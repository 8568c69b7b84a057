#include "imr/iterative.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>

#include "imr/result_store.hpp"
#include "iter_internal.hpp"

namespace imr {

namespace fs = std::filesystem;
using internal::IterContext;

// --- codecs ----------------------------------------------------------------

namespace {

void append_lp(std::string& out, const std::string& s) {
  append_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

struct ValueCursor {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) {
      throw_error(ErrorCode::kCorruptFrame, "truncated record payload");
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
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void done() const {
    if (pos != buf.size()) {
      throw_error(ErrorCode::kCorruptFrame, "trailing bytes in record payload");
    }
  }
};

}  // namespace

std::string encode_structure_value(const StructureRecord& r) {
  std::string out;
  append_lp(out, r.sk);
  append_lp(out, r.sv);
  append_u32(out, r.mk.partition);
  append_u64(out, r.mk.sequence);
  return out;
}

StructureRecord decode_structure_value(const std::string& pk, const std::string& value) {
  StructureRecord r;
  r.pk = pk;
  ValueCursor c{value};
  r.sk = c.str();
  r.sv = c.str();
  r.mk.partition = c.u32();
  r.mk.sequence = c.u64();
  c.done();
  return r;
}

std::string encode_delta_state_value(const DeltaStateRecord& r) {
  std::string out;
  append_lp(out, r.dv_new);
  append_lp(out, r.dv_prev);
  return out;
}

DeltaStateRecord decode_delta_state_value(const std::string& dk, const std::string& value) {
  DeltaStateRecord r;
  r.dk = dk;
  ValueCursor c{value};
  r.dv_new = c.str();
  r.dv_prev = c.str();
  c.done();
  return r;
}

std::string encode_cpc_value(const CpcEntry& e) {
  std::string out;
  uint64_t bits;
  static_assert(sizeof bits == sizeof e.accumulated);
  std::memcpy(&bits, &e.accumulated, sizeof bits);
  append_u64(out, bits);
  append_lp(out, e.last_computed);
  return out;
}

CpcEntry decode_cpc_value(const std::string& dk, const std::string& value) {
  CpcEntry e;
  e.dk = dk;
  ValueCursor c{value};
  uint64_t bits = c.u64();
  std::memcpy(&e.accumulated, &bits, sizeof bits);
  e.last_computed = c.str();
  c.done();
  return e;
}

// --- state file helpers ----------------------------------------------------

std::vector<KvRecord> load_state_file(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return read_kv_run(path);
}

void write_state_file_atomic(const fs::path& path, const std::vector<KvRecord>& records) {
  fs::path tmp = path;
  tmp += ".new";
  write_kv_run(tmp, records);
  fs::rename(tmp, path);
}

// --- data placement --------------------------------------------------------

void partition_iterative_data(const JobSpec& spec, const IterativeApp& app,
                              const std::vector<fs::path>& structure_runs,
                              const std::vector<fs::path>& state_runs, const Workdir& wd,
                              RunManifest* manifest, Metrics& metrics) {
  uint32_t n = static_cast<uint32_t>(spec.partitions);
  Partitioner part{n};

  // Structure: the run index + record position pin each record's
  // invocation id for good; placement hashes the projected state key (or
  // the record's own key in replicated mode).
  std::vector<std::vector<StructureRecord>> per_part(n);
  std::set<std::string> seen_sk;
  manifest->next_seq.assign(structure_runs.size(), 0);
  for (size_t t = 0; t < structure_runs.size(); t++) {
    SortedRunReader reader(structure_runs[t]);
    KvRecord rec;
    uint64_t seq = 0;
    while (reader.next(&rec)) {
      StructureRecord sr;
      sr.sk = rec.key;
      sr.sv = rec.value;
      sr.pk = app.project(rec.key);
      sr.mk = MapKey{static_cast<uint32_t>(t), seq++};
      if (!seen_sk.insert(sr.sk).second) {
        throw_error(ErrorCode::kContractViolation,
                    "structure keys must be unique; duplicate: " + sr.sk);
      }
      uint32_t p = app.replicated_state ? part(sr.sk) : part(sr.pk);
      per_part[p].push_back(std::move(sr));
    }
    manifest->next_seq[t] = seq;
  }
  uint64_t structure_records = 0;
  for (uint32_t p = 0; p < n; p++) {
    auto& records = per_part[p];
    std::sort(records.begin(), records.end(), [](const StructureRecord& a, const StructureRecord& b) {
      return a.pk != b.pk ? a.pk < b.pk : a.sk < b.sk;
    });
    SortedRunWriter w(wd.structure_run(p), RecordKind::kKv);
    for (const auto& r : records) w.add(KvRecord{r.pk, encode_structure_value(r)});
    w.close();
    structure_records += records.size();
  }

  // State: one sorted run per partition by hash(dk); replicated mode writes
  // the full state to every partition.
  std::vector<KvRecord> all_state;
  for (const auto& path : state_runs) {
    for (auto& rec : read_kv_run(path)) all_state.push_back(std::move(rec));
  }
  std::sort(all_state.begin(), all_state.end(),
            [](const KvRecord& a, const KvRecord& b) { return a.key < b.key; });
  for (size_t i = 1; i < all_state.size(); i++) {
    if (all_state[i].key == all_state[i - 1].key) {
      throw_error(ErrorCode::kContractViolation,
                  "state keys must be unique; duplicate: " + all_state[i].key);
    }
  }
  uint64_t replicated_bytes = 0;
  if (app.replicated_state) {
    uint64_t state_bytes = 0;
    for (const auto& r : all_state) state_bytes += r.key.size() + r.value.size();
    for (uint32_t p = 0; p < n; p++) {
      write_state_file_atomic(wd.state_run(p), all_state);
      replicated_bytes += state_bytes;
    }
  } else {
    std::vector<std::vector<KvRecord>> state_parts(n);
    for (auto& r : all_state) state_parts[part(r.key)].push_back(std::move(r));
    for (uint32_t p = 0; p < n; p++) {
      write_state_file_atomic(wd.state_run(p), state_parts[p]);
    }
  }

  manifest->input_runs = static_cast<int>(structure_runs.size());
  manifest->insert_seq.assign(n, 0);
  metrics.add("structure_records", structure_records);
  metrics.add("state_records", all_state.size());
  metrics.add("replicated_state_bytes", replicated_bytes);
  metrics.event("partition_data", {{"structure_records", structure_records},
                                   {"state_records", all_state.size()},
                                   {"replicated_state_bytes", replicated_bytes}});
}

// --- shared phase machinery ------------------------------------------------

namespace internal {

void run_partition_phase(IterContext& ctx, int iteration, FailureKind kind,
                         const std::function<void(int p, int attempt)>& task) {
  std::vector<int> pending(ctx.spec.partitions);
  for (int p = 0; p < ctx.spec.partitions; p++) pending[p] = p;
  int attempt = 0;
  while (!pending.empty()) {
    std::vector<int> workers;
    std::vector<std::function<void()>> tasks;
    for (int p : pending) {
      workers.push_back(ctx.sched.worker_for(p));
      tasks.push_back([&task, p, attempt] { task(p, attempt); });
    }
    auto errors = ctx.pool.run_phase(workers, tasks);
    std::vector<int> retry;
    for (size_t i = 0; i < errors.size(); i++) {
      if (!errors[i]) continue;
      try {
        std::rethrow_exception(errors[i]);
      } catch (const SimulatedFailure& f) {
        int p = pending[i];
        ctx.failures_recovered++;
        ctx.metrics.add("task_failures", 1);
        ctx.metrics.event("task_failure",
                          {{"kind", kind == FailureKind::kPrimeMap ? "map" : "reduce"},
                           {"iteration", iteration},
                           {"partition", p},
                           {"detail", f.description}});
        // Partition files only move through atomic renames and sealed
        // batches, so the on-disk state is still the pre-task state; the
        // retry just re-runs on the co-located worker.
        retry.push_back(p);
      }
    }
    pending = std::move(retry);
    attempt++;
    if (attempt > 8) {
      throw_error(ErrorCode::kTaskFailed, "partition phase failed to stabilize");
    }
  }
}

int handle_worker_failure(IterContext& ctx, int iteration) {
  if (!ctx.failures) return iteration;
  bool any = false;
  while (auto w = ctx.failures->worker_failure(iteration)) {
    any = true;
    std::vector<int> moved;
    for (int p = 0; p < ctx.spec.partitions; p++) {
      if (ctx.sched.worker_for(p) == *w) moved.push_back(p);
    }
    ctx.sched.fail_worker(*w);
    ctx.failures_recovered++;
    ctx.metrics.add("worker_failures", 1);
    nlohmann::json placed = nlohmann::json::array();
    for (int p : moved) placed.push_back({{"partition", p}, {"worker", ctx.sched.worker_for(p)}});
    ctx.metrics.event("worker_failure",
                      {{"iteration", iteration}, {"worker", *w}, {"moved", placed}});
  }
  if (!any || !ctx.spec.checkpoints_enabled) return iteration;

  // A dead worker takes its local partition copies with it. State flows
  // between partitions every iteration, so a stale restore cannot resume
  // mid-stream: roll every partition back to the newest durable checkpoint
  // and replay from there. Replay is deterministic, so the rejoin is exact.
  auto ck = latest_valid_checkpoint(ctx.wd, iteration - 1);
  if (!ck) return iteration;
  for (int p = 0; p < ctx.spec.partitions; p++) restore_partition(ctx.wd, *ck, p);
  ctx.metrics.event("rollback", {{"checkpoint", *ck}, {"resume_iteration", *ck + 1}});
  return *ck + 1;
}

void maybe_checkpoint(IterContext& ctx, int iteration) {
  if (!ctx.spec.checkpoints_enabled) return;
  if (iteration % std::max(1, ctx.spec.checkpoint_interval) != 0 && iteration != 0) return;
  write_checkpoint(ctx.wd, iteration, ctx.spec.partitions, ctx.metrics);
  ctx.last_checkpoint = iteration;
}

MapPhaseOut run_full_map_phase(IterContext& ctx, int iteration, bool inject_failures) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  MapPhaseOut out;
  out.spills.resize(n);
  std::vector<uint64_t> bytes(n, 0);
  std::vector<uint64_t> invocations(n, 0);

  auto task = [&](int p, int attempt) {
    FailurePlan* plan = inject_failures ? ctx.failures : nullptr;
    if (plan && attempt == 0 &&
        plan->should_fail(FailureKind::kPrimeMap, iteration, p, FailureTrigger::kStart)) {
      throw SimulatedFailure{"map task died at start"};
    }
    char tag[96];
    std::snprintf(tag, sizeof tag, "it%04d_map%05d_a%d", iteration, p, attempt);
    ShuffleSink sink(ctx.wd.tmp_dir(), tag, n, ctx.spec.spill_budget_bytes);

    std::vector<KvRecord> state = load_state_file(ctx.wd.state_run(p));
    uint64_t total = 0;
    {
      SortedRunReader counter(ctx.wd.structure_run(p));
      total = counter.header().record_count;
    }
    uint64_t mid_at = total / 2;

    std::set<std::string> seen;
    auto mapped_emit = [&](const std::string& sk, const std::string& sv, const std::string& pk,
                           const std::string& dv, MapKey mk) {
      seen.clear();
      ctx.app.map(sk, sv, pk, dv, [&](const std::string& k2, const std::string& v2) {
        if (!seen.insert(k2).second) {
          throw_error(ErrorCode::kContractViolation,
                      "map invocation emitted duplicate contribution key '" + k2 + "'");
        }
        sink.emit(MRBGEdge{k2, mk, v2, false});
      });
      invocations[p]++;
    };

    SortedRunReader reader(ctx.wd.structure_run(p));
    KvRecord raw;
    uint64_t done = 0;
    if (ctx.app.replicated_state) {
      std::map<std::string, std::string> state_map;
      for (const auto& r : state) state_map[r.key] = r.value;
      while (reader.next(&raw)) {
        if (plan && attempt == 0 && done == mid_at &&
            plan->should_fail(FailureKind::kPrimeMap, iteration, p, FailureTrigger::kMid)) {
          throw SimulatedFailure{"map task died mid-stream"};
        }
        StructureRecord sr = decode_structure_value(raw.key, raw.value);
        auto it = state_map.find(sr.pk);
        std::string dv = it != state_map.end() ? it->second : ctx.app.init(sr.pk);
        mapped_emit(sr.sk, sr.sv, sr.pk, dv, sr.mk);
        done++;
      }
    } else {
      // Merge-join: structure sorted by pk, state sorted by dk. Identity
      // edges carry every state value to its reduce group; state keys the
      // structure introduces get init values and identity edges too.
      size_t si = 0;
      auto flush_state_until = [&](const std::string& pk, bool inclusive) {
        while (si < state.size() &&
               (state[si].key < pk || (inclusive && state[si].key == pk))) {
          sink.emit(MRBGEdge{state[si].key, identity_map_key(), state[si].value, false});
          si++;
        }
      };
      std::string current_pk;
      std::string current_dv;
      bool have_pk = false;
      while (reader.next(&raw)) {
        if (plan && attempt == 0 && done == mid_at &&
            plan->should_fail(FailureKind::kPrimeMap, iteration, p, FailureTrigger::kMid)) {
          throw SimulatedFailure{"map task died mid-stream"};
        }
        StructureRecord sr = decode_structure_value(raw.key, raw.value);
        if (!have_pk || sr.pk != current_pk) {
          flush_state_until(sr.pk, false);
          if (si < state.size() && state[si].key == sr.pk) {
            current_dv = state[si].value;
          } else {
            // State key missing: seed it and emit its identity edge here,
            // in key order.
            current_dv = ctx.app.init(sr.pk);
            sink.emit(MRBGEdge{sr.pk, identity_map_key(), current_dv, false});
          }
          current_pk = sr.pk;
          have_pk = true;
        }
        mapped_emit(sr.sk, sr.sv, sr.pk, current_dv, sr.mk);
        done++;
      }
      // Trailing state records still carry forward.
      while (si < state.size()) {
        sink.emit(MRBGEdge{state[si].key, identity_map_key(), state[si].value, false});
        si++;
      }
    }
    sink.finish();
    out.spills[p] = sink.spills();
    bytes[p] = sink.bytes_emitted();
  };

  run_partition_phase(ctx, iteration, FailureKind::kPrimeMap, task);
  for (uint32_t p = 0; p < n; p++) {
    out.shuffle_bytes += bytes[p];
    out.invocations += invocations[p];
  }
  return out;
}

std::vector<fs::path> spills_for(const MapPhaseOut& out, int p) {
  std::vector<fs::path> runs;
  for (const auto& src : out.spills) {
    if (src.empty()) continue;
    for (const auto& path : src[p]) runs.push_back(path);
  }
  return runs;
}

double assemble_replicated_state(IterContext& ctx, uint64_t* propagated) {
  // Gather each partition's partial outputs in key order.
  std::vector<KvRecord> outputs;
  for (int p = 0; p < ctx.spec.partitions; p++) {
    fs::path partial = ctx.wd.partition_dir(p) / "partial.run";
    if (!fs::exists(partial)) continue;
    for (auto& r : read_kv_run(partial)) outputs.push_back(std::move(r));
    fs::remove(partial);
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
  std::vector<KvRecord> new_state{KvRecord{state[0].key, next}};
  uint64_t bytes = state[0].key.size() + next.size();
  for (int p = 0; p < ctx.spec.partitions; p++) {
    write_state_file_atomic(ctx.wd.state_run(p), new_state);
    ctx.metrics.add("replicated_state_bytes", bytes);
  }
  *propagated = 1;
  return l1;
}

FullIterationResult run_full_iteration(IterContext& ctx, int iteration) {
  uint32_t n = static_cast<uint32_t>(ctx.spec.partitions);
  FullIterationResult res;
  MapPhaseOut mapped = run_full_map_phase(ctx, iteration, /*inject_failures=*/true);
  res.shuffle_bytes = mapped.shuffle_bytes;

  std::vector<double> l1(n, 0.0);
  std::vector<uint64_t> state_counts(n, 0);
  std::vector<uint64_t> groups_done(n, 0);

  auto task = [&](int p, int attempt) {
    if (ctx.failures && attempt == 0 &&
        ctx.failures->should_fail(FailureKind::kPrimeReduce, iteration, p,
                                  FailureTrigger::kStart)) {
      throw SimulatedFailure{"reduce task died at start"};
    }
    l1[p] = 0.0;
    state_counts[p] = 0;
    groups_done[p] = 0;
    std::vector<fs::path> runs = spills_for(mapped, p);
    EdgeMerger merger(runs);
    GroupCursor groups(merger);

    // Group count for the mid-task injection point; only worth a second
    // pass when injection is possible at all.
    uint64_t total_groups = 0;
    if (ctx.failures) {
      EdgeMerger counter(runs);
      GroupCursor cg(counter);
      std::string k2;
      std::vector<MRBGEdge> edges;
      while (cg.next_group(&k2, &edges)) total_groups++;
    }

    std::vector<KvRecord> new_state;
    std::vector<KvRecord> partials;
    std::string k2;
    std::vector<MRBGEdge> edges;
    while (groups.next_group(&k2, &edges)) {
      if (ctx.failures && attempt == 0 && groups_done[p] == total_groups / 2 &&
          ctx.failures->should_fail(FailureKind::kPrimeReduce, iteration, p,
                                    FailureTrigger::kMid)) {
        throw SimulatedFailure{"reduce task died mid-stream"};
      }
      groups_done[p]++;
      std::string prior;
      bool have_prior = false;
      std::vector<std::string> values;
      for (const auto& e : edges) {
        if (is_identity(e)) {
          prior = e.v2;
          have_prior = true;
        } else {
          values.push_back(e.v2);
        }
      }
      if (ctx.app.replicated_state) {
        partials.push_back(KvRecord{k2, ctx.app.reduce(k2, "", values)});
        continue;
      }
      if (!have_prior) prior = ctx.app.init(k2);
      std::string next = ctx.app.reduce(k2, prior, values);
      l1[p] += ctx.app.difference(prior, next);
      new_state.push_back(KvRecord{k2, next});
    }
    if (ctx.app.replicated_state) {
      write_state_file_atomic(ctx.wd.partition_dir(p) / "partial.run", partials);
    } else {
      write_state_file_atomic(ctx.wd.state_run(p), new_state);
      state_counts[p] = new_state.size();
    }
  };
  run_partition_phase(ctx, iteration, FailureKind::kPrimeReduce, task);

  if (ctx.app.replicated_state) {
    uint64_t propagated = 0;
    res.l1 = assemble_replicated_state(ctx, &propagated);
    res.state_records = propagated;
  } else {
    for (uint32_t p = 0; p < n; p++) {
      res.l1 += l1[p];
      res.state_records += state_counts[p];
    }
  }
  for (uint32_t p = 0; p < n; p++) res.reduce_groups += groups_done[p];
  ctx.wd.clear_tmp();
  return res;
}

void export_state_output(IterContext& ctx) {
  if (ctx.app.replicated_state) {
    // Every partition holds the same copy; export one.
    write_state_file_atomic(ctx.wd.output_run(0), load_state_file(ctx.wd.state_run(0)));
    return;
  }
  for (int p = 0; p < ctx.spec.partitions; p++) {
    write_state_file_atomic(ctx.wd.output_run(p), load_state_file(ctx.wd.state_run(p)));
  }
}

}  // namespace internal

// --- full iterative driver -------------------------------------------------

IterationOutcome run_iterative_job(const JobSpec& spec, const IterativeApp& app,
                                   const Workdir& wd, WorkerPool& pool, Metrics& metrics,
                                   FailurePlan* failures) {
  IterContext ctx(spec, app, wd, pool, metrics, failures);
  IterationOutcome outcome;
  internal::maybe_checkpoint(ctx, 0);

  for (int it = 1; it <= spec.max_iters; it++) {
    double t0 = now_ms();
    it = internal::handle_worker_failure(ctx, it);
    auto res = internal::run_full_iteration(ctx, it);
    outcome.iterations = it;
    outcome.final_l1 = res.l1;

    IterationRow row;
    row.iteration = it;
    row.l1_delta = res.l1;
    row.wall_ms = now_ms() - t0;
    row.shuffle_bytes = res.shuffle_bytes;
    row.propagated_kv = res.state_records;
    row.p_delta = 1.0;
    row.mrbg_enabled = false;
    metrics.iteration(row);
    internal::maybe_checkpoint(ctx, it);

    if (res.l1 <= spec.tol) {
      outcome.converged = true;
      break;
    }
  }
  outcome.failures_recovered = ctx.failures_recovered;
  internal::export_state_output(ctx);
  return outcome;
}

// --- graph rebuild + snapshots ---------------------------------------------

void build_edge_graph(const JobSpec& spec, const IterativeApp& app, const Workdir& wd,
                      WorkerPool& pool, Metrics& metrics) {
  IterContext ctx(spec, app, wd, pool, metrics, nullptr);
  auto mapped = internal::run_full_map_phase(ctx, 0, /*inject_failures=*/false);

  std::vector<std::function<void()>> tasks;
  std::vector<int> workers;
  for (int p = 0; p < spec.partitions; p++) {
    workers.push_back(ctx.sched.worker_for(p));
    tasks.push_back([&, p] {
      fs::remove(wd.partition_dir(p) / "mrbg.dat");
      fs::remove(wd.partition_dir(p) / "mrbg.idx");
      fs::remove(wd.partition_dir(p) / "mrbg.dat.new");
      MrbgStore::init(wd.partition_dir(p));
      MrbgStore store(wd.partition_dir(p), ctx.store_options());
      store.begin_append_batch();
      auto runs = internal::spills_for(mapped, p);
      EdgeMerger merger(runs);
      GroupCursor groups(merger);
      std::string k2;
      std::vector<MRBGEdge> edges;
      std::map<std::string, ReduceOutputs> partials;
      while (groups.next_group(&k2, &edges)) {
        Chunk chunk;
        chunk.k2 = k2;
        for (const auto& e : edges) chunk.edges.push_back(StoredEdge{e.mk, e.v2});
        store.append_chunk(chunk);
        if (app.replicated_state) {
          std::vector<std::string> values;
          for (const auto& e : edges) values.push_back(e.v2);
          partials[k2] = ReduceOutputs{KvRecord{k2, app.reduce(k2, "", values)}};
        }
      }
      store.seal_batch();
      // Replicated mode re-assembles state from per-partition partials, so
      // each partition keeps its last reduce outputs queryable.
      if (app.replicated_state) ResultStore::write(wd.partition_dir(p), partials);
    });
  }
  auto errors = pool.run_phase(workers, tasks);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  wd.clear_tmp();
  metrics.event("edge_graph_rebuilt", {{"partitions", spec.partitions}});
}

namespace {

const char* const kSnapshotFiles[] = {"structure.run", "state.run",   "mrbg.dat",
                                      "mrbg.idx",      "results.run", "results.idx",
                                      "cpc.run"};

}  // namespace

void save_snapshot(const Workdir& wd, const RunManifest& manifest) {
  fs::path snap = wd.snapshot_dir();
  fs::remove_all(snap);
  for (int p = 0; p < manifest.spec.partitions; p++) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05d", p);
    fs::path dst = snap / "partitions" / buf;
    fs::create_directories(dst);
    for (const char* name : kSnapshotFiles) {
      fs::path src = wd.partition_dir(p) / name;
      if (fs::exists(src)) fs::copy_file(src, dst / name);
    }
  }
  manifest.save(snap / "manifest.json");
}

RunManifest load_snapshot(const fs::path& snapshot_dir, const Workdir& dst) {
  RunManifest manifest = RunManifest::load(snapshot_dir / "manifest.json");
  for (int p = 0; p < manifest.spec.partitions; p++) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05d", p);
    fs::path src = snapshot_dir / "partitions" / buf;
    if (!fs::exists(src)) {
      throw_error(ErrorCode::kNotFound, "snapshot partition missing: " + src.string());
    }
    fs::create_directories(dst.partition_dir(p));
    for (const char* name : kSnapshotFiles) {
      fs::path file = src / name;
      if (!fs::exists(file)) continue;
      fs::copy_file(file, dst.partition_dir(p) / name,
                    fs::copy_options::overwrite_existing);
    }
  }
  return manifest;
}

}  // namespace imr
