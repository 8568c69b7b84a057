#include "imr/incremental.hpp"

#include <algorithm>
#include <set>

#include "imr/mrbg_store.hpp"
#include "imr/result_store.hpp"

namespace imr {

namespace fs = std::filesystem;

namespace {

struct DeltaMapOut {
  std::vector<std::vector<fs::path>> spills;
  uint64_t invocations = 0;
  uint64_t bytes = 0;
};

// Applies one key's delta edges to its stored chunk. Edges arrive in
// (mk, tombstone-first) order; a tombstone removes the matching edge, an
// insert adds or replaces at its invocation key.
void apply_delta_edges(Chunk* chunk, const std::vector<MRBGEdge>& edges, IncrJobStats* stats) {
  for (const auto& e : edges) {
    auto it = std::lower_bound(
        chunk->edges.begin(), chunk->edges.end(), e.mk,
        [](const StoredEdge& s, const MapKey& mk) { return s.mk < mk; });
    bool found = it != chunk->edges.end() && it->mk == e.mk;
    if (e.tombstone) {
      if (found) {
        chunk->edges.erase(it);
      } else {
        stats->tombstones_ignored++;
      }
    } else if (found) {
      it->v2 = e.v2;
      stats->edges_replaced++;
    } else {
      chunk->edges.insert(it, StoredEdge{e.mk, e.v2});
    }
  }
}

}  // namespace

IncrJobStats run_incremental_job(const JobSpec& spec, const OneStepApp& app,
                                 const std::vector<fs::path>& delta_runs, const Workdir& wd,
                                 WorkerPool& pool, Metrics& metrics) {
  uint32_t n = static_cast<uint32_t>(spec.partitions);
  bool accumulate = app.accumulator.has_value();
  IncrJobStats stats;
  double t0 = now_ms();

  // Delta map phase. Invocation ids come from the delta records themselves:
  // a delete replays the id of the base-run invocation it retracts, an
  // insert carries a freshly minted id.
  size_t tasks = delta_runs.size();
  std::vector<DeltaMapOut> outs(tasks);
  std::vector<std::function<void()>> map_tasks;
  std::vector<int> map_workers;
  for (size_t t = 0; t < tasks; t++) {
    map_workers.push_back(static_cast<int>(t % pool.size()));
    map_tasks.push_back([&, t] {
      char tag[64];
      std::snprintf(tag, sizeof tag, "dmap%05zu", t);
      ShuffleSink sink(wd.tmp_dir(), tag, n, spec.spill_budget_bytes);
      SortedRunReader reader(delta_runs[t]);
      DeltaRecord rec;
      std::set<std::string> seen_k2;
      while (reader.next(&rec)) {
        if (accumulate && rec.sign == DeltaSign::kDelete) {
          throw_error(ErrorCode::kContractViolation,
                      "accumulator jobs accept insert-only deltas; got a delete for key '" +
                          rec.key + "'");
        }
        bool tomb = rec.sign == DeltaSign::kDelete;
        seen_k2.clear();
        app.map(KvRecord{rec.key, rec.value},
                [&](const std::string& k2, const std::string& v2) {
                  if (!seen_k2.insert(k2).second) {
                    throw_error(ErrorCode::kContractViolation,
                                "map invocation emitted duplicate reduce key '" + k2 + "'");
                  }
                  sink.emit(MRBGEdge{k2, rec.origin, tomb ? std::string() : v2, tomb});
                });
        outs[t].invocations++;
      }
      sink.finish();
      outs[t].spills = sink.spills();
      outs[t].bytes = sink.bytes_emitted();
    });
  }
  auto map_errors = pool.run_phase(map_workers, map_tasks);
  for (auto& e : map_errors) {
    if (e) std::rethrow_exception(e);
  }
  for (const auto& o : outs) {
    stats.delta_map_invocations += o.invocations;
    stats.shuffle_bytes += o.bytes;
  }
  metrics.event("stage", {{"stage", "delta_map"},
                          {"invocations", stats.delta_map_invocations},
                          {"wall_ms", now_ms() - t0}});

  // Merge + selective reduce per partition.
  std::vector<IncrJobStats> per_part(n);
  std::vector<std::function<void()>> reduce_tasks;
  std::vector<int> reduce_workers;
  for (uint32_t p = 0; p < n; p++) {
    reduce_workers.push_back(static_cast<int>(p % pool.size()));
    reduce_tasks.push_back([&, p] {
      IncrJobStats& ps = per_part[p];
      std::vector<fs::path> runs;
      for (const auto& o : outs) {
        for (const auto& path : o.spills[p]) runs.push_back(path);
      }
      if (runs.empty()) return;

      // First pass over the merged stream: collect the affected key set so
      // the store can plan one ascending read pass over it.
      std::vector<std::string> affected;
      {
        EdgeMerger merger(runs);
        MRBGEdge e;
        while (merger.next(&e)) {
          if (affected.empty() || affected.back() != e.k2) affected.push_back(e.k2);
        }
      }
      if (affected.empty()) return;

      std::map<std::string, std::optional<ReduceOutputs>> patches;

      if (accumulate) {
        // Fold new values into stored totals; the edge graph stays cold.
        ResultStore results(wd.partition_dir(p));
        EdgeMerger merger(runs);
        GroupCursor groups(merger);
        std::string k2;
        std::vector<MRBGEdge> edges;
        while (groups.next_group(&k2, &edges)) {
          std::string acc = app.accumulator->identity;
          for (const auto& e : edges) acc = app.accumulator->combine(acc, e.v2);
          std::string prior = app.accumulator->identity;
          if (auto existing = results.lookup(k2)) {
            prior = (*existing)[0].value;
          }
          patches[k2] = ReduceOutputs{KvRecord{k2, app.accumulator->combine(prior, acc)}};
          ps.accumulator_folds++;
          ps.reduce_reexecuted_keys++;
        }
        results.patch(patches);
      } else {
        StoreOptions so;
        so.gap_threshold_bytes = spec.gap_threshold_bytes;
        so.read_cache_bytes = spec.read_cache_bytes;
        so.append_buffer_bytes = spec.append_buffer_bytes;
        MrbgStore store(wd.partition_dir(p), so);
        auto pass = store.begin_query_pass(affected);
        store.begin_append_batch();

        ResultStore results(wd.partition_dir(p));
        EdgeMerger merger(runs);
        GroupCursor groups(merger);
        std::string k2;
        std::vector<MRBGEdge> edges;
        while (groups.next_group(&k2, &edges)) {
          Chunk chunk;
          if (auto stored = pass.get(k2)) {
            chunk = std::move(*stored);
          } else {
            chunk.k2 = k2;
          }
          apply_delta_edges(&chunk, edges, &ps);
          ps.reduce_reexecuted_keys++;

          if (chunk.edges.empty()) {
            if (store.contains(k2)) store.drop_key(k2);
            patches[k2] = std::nullopt;
            ps.result_retractions++;
            continue;
          }
          store.append_chunk(chunk);
          std::vector<std::string> values;
          values.reserve(chunk.edges.size());
          for (const auto& e : chunk.edges) values.push_back(e.v2);
          ReduceOutputs outputs;
          app.reduce(k2, values,
                     [&](const std::string& k3, const std::string& v3) {
                       outputs.push_back(KvRecord{k3, v3});
                     });
          ps.reduce_invocations++;
          patches[k2] = std::move(outputs);
        }
        store.seal_batch();
        results.patch(patches);
      }

      // Refresh this partition's flattened output from the patched store.
      ResultStore patched(wd.partition_dir(p));
      write_sorted_output(wd.output_run(p), patched.flattened());
    });
  }
  auto reduce_errors = pool.run_phase(reduce_workers, reduce_tasks);
  for (auto& e : reduce_errors) {
    if (e) std::rethrow_exception(e);
  }

  for (const auto& ps : per_part) {
    stats.reduce_reexecuted_keys += ps.reduce_reexecuted_keys;
    stats.reduce_invocations += ps.reduce_invocations;
    stats.result_retractions += ps.result_retractions;
    stats.tombstones_ignored += ps.tombstones_ignored;
    stats.edges_replaced += ps.edges_replaced;
    stats.accumulator_folds += ps.accumulator_folds;
  }
  metrics.add("delta_map_invocations", stats.delta_map_invocations);
  metrics.add("reduce_reexecuted_keys", stats.reduce_reexecuted_keys);
  metrics.add("reduce_invocations", stats.reduce_invocations);
  metrics.add("result_retractions", stats.result_retractions);
  metrics.add("tombstones_ignored", stats.tombstones_ignored);
  metrics.event("stage", {{"stage", "delta_reduce"},
                          {"reexecuted", stats.reduce_reexecuted_keys},
                          {"wall_ms", now_ms() - t0}});
  wd.clear_tmp();
  return stats;
}

}  // namespace imr
