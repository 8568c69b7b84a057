#include "imr/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>

#include "imr/mrbg_store.hpp"
#include "imr/result_store.hpp"

namespace imr {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw_error(ErrorCode::kCorruptFrame, "not a number: '" + s + "'");
  }
  return v;
}

void write_sorted_output(const fs::path& path, std::vector<KvRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const KvRecord& a, const KvRecord& b) { return a.key < b.key; });
  write_kv_run(path, records);
}

// --- ShuffleSink -----------------------------------------------------------

ShuffleSink::ShuffleSink(fs::path spill_dir, std::string tag, uint32_t partitions,
                         uint64_t spill_budget_bytes)
    : spill_dir_(std::move(spill_dir)),
      tag_(std::move(tag)),
      partitioner_{partitions},
      budget_(spill_budget_bytes),
      buffers_(partitions),
      spill_seq_(partitions, 0),
      spills_(partitions) {
  fs::create_directories(spill_dir_);
}

void ShuffleSink::emit(const MRBGEdge& edge) {
  uint32_t p = partitioner_(edge.k2);
  uint64_t cost = edge.k2.size() + edge.v2.size() + 32;
  buffers_[p].push_back(edge);
  buffered_bytes_ += cost;
  total_bytes_ += cost;
  total_records_++;
  if (buffered_bytes_ >= budget_) {
    for (uint32_t q = 0; q < buffers_.size(); q++) spill_partition(q);
    buffered_bytes_ = 0;
  }
}

void ShuffleSink::spill_partition(uint32_t p) {
  auto& buf = buffers_[p];
  if (buf.empty()) return;
  std::stable_sort(buf.begin(), buf.end(), edge_order_lt);
  char name[160];
  std::snprintf(name, sizeof name, "%s_p%05u_s%04d.run", tag_.c_str(), p, spill_seq_[p]++);
  fs::path path = spill_dir_ / name;
  SortedRunWriter w(path, RecordKind::kEdge);
  for (const auto& e : buf) w.add(e);
  w.close();
  spills_[p].push_back(path);
  buf.clear();
}

void ShuffleSink::finish() {
  for (uint32_t p = 0; p < buffers_.size(); p++) spill_partition(p);
  buffered_bytes_ = 0;
}

// --- EdgeMerger ------------------------------------------------------------

EdgeMerger::EdgeMerger(const std::vector<fs::path>& runs) {
  sources_.reserve(runs.size());
  for (const auto& path : runs) {
    auto src = std::make_unique<Source>(Source{SortedRunReader(path), MRBGEdge{}, false});
    src->has = src->reader.next(&src->head);
    sources_.push_back(std::move(src));
  }
}

bool EdgeMerger::next(MRBGEdge* out) {
  // Linear scan beats a heap for the handful of runs we merge at a time,
  // and makes the source-order tie-break obvious.
  size_t best = sources_.size();
  for (size_t i = 0; i < sources_.size(); i++) {
    if (!sources_[i]->has) continue;
    if (best == sources_.size() || edge_order_lt(sources_[i]->head, sources_[best]->head)) {
      best = i;
    }
  }
  if (best == sources_.size()) return false;
  *out = sources_[best]->head;
  sources_[best]->has = sources_[best]->reader.next(&sources_[best]->head);
  return true;
}

// --- GroupCursor -----------------------------------------------------------

void GroupCursor::advance() { has_pending_ = merger_->next(&pending_); }

bool GroupCursor::next_group(std::string* k2, std::vector<MRBGEdge>* edges) {
  if (!has_pending_) return false;
  *k2 = pending_.k2;
  edges->clear();
  while (has_pending_ && pending_.k2 == *k2) {
    edges->push_back(pending_);
    advance();
  }
  return true;
}

// --- plain job -------------------------------------------------------------

namespace {

struct MapTaskOut {
  std::vector<std::vector<fs::path>> spills;
  uint64_t invocations = 0;
  uint64_t bytes = 0;
  uint64_t records = 0;
};

}  // namespace

PlainJobStats run_plain_job(const JobSpec& spec, const OneStepApp& app,
                            const std::vector<fs::path>& input_runs, const Workdir& wd,
                            WorkerPool& pool, Metrics& metrics) {
  if (input_runs.empty()) {
    throw_error(ErrorCode::kConfig, "plain job needs at least one input run");
  }
  uint32_t n = static_cast<uint32_t>(spec.partitions);
  double t0 = now_ms();

  // Map phase: task t owns input run t; the run index is the invocation
  // id's partition half, which is what keeps edge identity stable when a
  // later delta job re-derives ids from input positions.
  size_t tasks = input_runs.size();
  std::vector<MapTaskOut> outs(tasks);
  std::vector<std::function<void()>> map_tasks;
  std::vector<int> map_workers;
  for (size_t t = 0; t < tasks; t++) {
    map_workers.push_back(static_cast<int>(t % pool.size()));
    map_tasks.push_back([&, t] {
      char tag[64];
      std::snprintf(tag, sizeof tag, "map%05zu", t);
      ShuffleSink sink(wd.tmp_dir(), tag, n, spec.spill_budget_bytes);
      SortedRunReader reader(input_runs[t]);
      KvRecord rec;
      uint64_t seq = 0;
      std::set<std::string> seen_k2;
      while (reader.next(&rec)) {
        MapKey mk{static_cast<uint32_t>(t), seq++};
        seen_k2.clear();
        app.map(rec, [&](const std::string& k2, const std::string& v2) {
          if (spec.mrbg_enabled && !seen_k2.insert(k2).second) {
            throw_error(ErrorCode::kContractViolation,
                        "map invocation emitted duplicate reduce key '" + k2 +
                            "' with state preservation enabled");
          }
          sink.emit(MRBGEdge{k2, mk, v2, false});
        });
        outs[t].invocations++;
      }
      sink.finish();
      outs[t].spills = sink.spills();
      outs[t].bytes = sink.bytes_emitted();
      outs[t].records = sink.records_emitted();
    });
  }
  auto map_errors = pool.run_phase(map_workers, map_tasks);
  for (auto& e : map_errors) {
    if (e) std::rethrow_exception(e);
  }

  double t1 = now_ms();
  PlainJobStats stats;
  for (const auto& o : outs) {
    stats.map_invocations += o.invocations;
    stats.shuffle_bytes += o.bytes;
  }
  metrics.add("map_invocations", stats.map_invocations);
  metrics.add("shuffle_bytes", stats.shuffle_bytes);
  metrics.event("stage", {{"stage", "map"},
                          {"tasks", tasks},
                          {"invocations", stats.map_invocations},
                          {"wall_ms", now_ms() - t0}});

  // Reduce phase: partition p merges every map task's runs for p.
  std::vector<uint64_t> reduce_counts(n, 0);
  std::vector<uint64_t> output_counts(n, 0);
  std::vector<std::function<void()>> reduce_tasks;
  std::vector<int> reduce_workers;
  for (uint32_t p = 0; p < n; p++) {
    reduce_workers.push_back(static_cast<int>(p % pool.size()));
    reduce_tasks.push_back([&, p] {
      std::vector<fs::path> runs;
      for (const auto& o : outs) {
        for (const auto& path : o.spills[p]) runs.push_back(path);
      }
      EdgeMerger merger(runs);
      GroupCursor groups(merger);

      std::unique_ptr<MrbgStore> store;
      if (spec.mrbg_enabled) {
        MrbgStore::init(wd.partition_dir(p));
        StoreOptions so;
        so.gap_threshold_bytes = spec.gap_threshold_bytes;
        so.read_cache_bytes = spec.read_cache_bytes;
        so.append_buffer_bytes = spec.append_buffer_bytes;
        store = std::make_unique<MrbgStore>(wd.partition_dir(p), so);
        store->begin_append_batch();
      }

      std::map<std::string, ReduceOutputs> results;
      std::vector<KvRecord> flat;
      std::string k2;
      std::vector<MRBGEdge> edges;
      while (groups.next_group(&k2, &edges)) {
        std::vector<std::string> values;
        values.reserve(edges.size());
        for (const auto& e : edges) values.push_back(e.v2);

        ReduceOutputs outputs;
        auto emit = [&](const std::string& k3, const std::string& v3) {
          outputs.push_back(KvRecord{k3, v3});
        };
        if (app.accumulator) {
          std::string acc = app.accumulator->identity;
          for (const auto& v : values) acc = app.accumulator->combine(acc, v);
          emit(k2, acc);
        } else {
          app.reduce(k2, values, emit);
        }
        reduce_counts[p]++;

        if (store) {
          Chunk chunk;
          chunk.k2 = k2;
          chunk.edges.reserve(edges.size());
          for (const auto& e : edges) chunk.edges.push_back(StoredEdge{e.mk, e.v2});
          store->append_chunk(chunk);
          results[k2] = outputs;
        }
        for (auto& o : outputs) flat.push_back(std::move(o));
      }
      if (store) {
        store->seal_batch();
        ResultStore::write(wd.partition_dir(p), results);
      }
      output_counts[p] = flat.size();
      write_sorted_output(wd.output_run(p), std::move(flat));
    });
  }
  auto reduce_errors = pool.run_phase(reduce_workers, reduce_tasks);
  for (auto& e : reduce_errors) {
    if (e) std::rethrow_exception(e);
  }

  for (uint32_t p = 0; p < n; p++) {
    stats.reduce_invocations += reduce_counts[p];
    stats.output_records += output_counts[p];
  }
  metrics.add("reduce_invocations", stats.reduce_invocations);
  metrics.add("output_records", stats.output_records);
  metrics.event("stage", {{"stage", "reduce"},
                          {"tasks", n},
                          {"invocations", stats.reduce_invocations},
                          {"wall_ms", now_ms() - t1}});
  wd.clear_tmp();
  return stats;
}

}  // namespace imr
