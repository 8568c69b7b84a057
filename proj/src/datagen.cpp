#include "imr/datagen.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "imr/apps.hpp"
#include "imr/common.hpp"
#include "imr/engine.hpp"
#include "imr/run_file.hpp"

namespace imr {

namespace fs = std::filesystem;

namespace {

// Deterministic draws straight off the engine, not through std distributions:
// mt19937_64 output is pinned by the standard, distribution algorithms are not.
uint64_t rnd_below(std::mt19937_64& g, uint64_t n) { return n ? g() % n : 0; }

double rnd_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

std::string fmt_id(const char* fmt, uint64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, static_cast<unsigned long long>(i));
  return buf;
}

std::string doc_key(uint64_t i) { return fmt_id("d%07llu", i); }
std::string vertex_key(uint64_t i) { return fmt_id("v%06llu", i); }
std::string point_key(uint64_t i) { return fmt_id("p%06llu", i); }
std::string vocab_word(uint64_t i) { return fmt_id("w%04llu", i); }

std::string make_doc(std::mt19937_64& g, uint64_t vocab, uint64_t doc_len) {
  uint64_t len = 1 + rnd_below(g, doc_len);
  std::string out;
  for (uint64_t i = 0; i < len; i++) {
    if (i) out += ' ';
    out += vocab_word(rnd_below(g, vocab));
  }
  return out;
}

std::string make_weighted_adjacency(std::mt19937_64& g, uint64_t self, uint64_t vertices,
                                    uint64_t degree, uint64_t weight_range) {
  uint64_t want = 1 + rnd_below(g, degree);
  std::map<uint64_t, double> targets;
  for (uint64_t i = 0; i < want; i++) {
    uint64_t t = rnd_below(g, vertices);
    if (t == self) continue;
    targets.emplace(t, static_cast<double>(1 + rnd_below(g, weight_range)));
  }
  if (targets.empty()) {
    uint64_t t = (self + 1) % vertices;
    targets.emplace(t, static_cast<double>(1 + rnd_below(g, weight_range)));
  }
  std::vector<std::pair<std::string, double>> adj;
  for (const auto& [t, w] : targets) adj.emplace_back(vertex_key(t), w);
  return format_weighted_adjacency(adj);
}

std::string make_neighbor_list(std::mt19937_64& g, uint64_t vertices, uint64_t degree) {
  uint64_t want = 1 + rnd_below(g, degree);
  std::set<uint64_t> targets;
  for (uint64_t i = 0; i < want; i++) targets.insert(rnd_below(g, vertices));
  std::string out;
  for (uint64_t t : targets) {
    if (!out.empty()) out += ' ';
    out += vertex_key(t);
  }
  return out;
}

// k-means ground-truth centers are a fixed grid so delta points land in the
// same mixture the base was drawn from.
std::vector<double> cluster_center(uint64_t c, uint64_t dims) {
  std::vector<double> out(dims);
  for (uint64_t j = 0; j < dims; j++) out[j] = 10.0 * static_cast<double>(c) + 3.0 * static_cast<double>(j);
  return out;
}

std::string make_point(std::mt19937_64& g, uint64_t clusters, uint64_t dims) {
  uint64_t c = rnd_below(g, clusters);
  auto coords = cluster_center(c, dims);
  for (auto& x : coords) x += rnd_unit(g) * 4.0 - 2.0;
  return format_vector(coords);
}

void write_split_runs(const fs::path& dir, const std::vector<KvRecord>& records, int runs,
                      std::vector<uint64_t>* counts) {
  fs::create_directories(dir);
  uint64_t n = records.size();
  for (int t = 0; t < runs; t++) {
    uint64_t lo = n * static_cast<uint64_t>(t) / static_cast<uint64_t>(runs);
    uint64_t hi = n * static_cast<uint64_t>(t + 1) / static_cast<uint64_t>(runs);
    std::vector<KvRecord> slice(records.begin() + lo, records.begin() + hi);
    char name[32];
    std::snprintf(name, sizeof name, "part-%05d.run", t);
    write_kv_run(dir / name, slice);
    counts->push_back(hi - lo);
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

uint64_t param(const nlohmann::json& params, const char* name, uint64_t fallback) {
  return params.value(name, fallback);
}

}  // namespace

nlohmann::json GenSummary::to_json() const {
  return {{"app", app},
          {"records", records},
          {"state_records", state_records},
          {"runs", runs},
          {"params", params}};
}

nlohmann::json DeltaSummary::to_json() const {
  return {{"app", app},
          {"base_records", base_records},
          {"touched", touched},
          {"deletes", deletes},
          {"inserts", inserts},
          {"delta_records", delta_records}};
}

GenSummary generate_input(const std::string& app, nlohmann::json params, uint64_t seed,
                          const fs::path& out_dir) {
  if (!params.is_object()) params = nlohmann::json::object();
  std::mt19937_64 g(seed);
  fs::create_directories(out_dir);

  GenSummary summary;
  summary.app = app;
  std::vector<uint64_t> run_counts;
  int runs = static_cast<int>(param(params, "input_runs", 2));
  if (runs < 1) throw_error(ErrorCode::kConfig, "input_runs must be >= 1");
  nlohmann::json app_config;
  std::string kind = "one-step";
  std::vector<KvRecord> records;
  std::vector<KvRecord> state;

  if (app == "wordcount" || app == "wordcount-acc" || app == "paircount") {
    uint64_t n = param(params, "records", 1000);
    uint64_t vocab = param(params, "vocab", 200);
    uint64_t doc_len = param(params, "doc_len", 8);
    uint64_t want = param(params, "candidates", 20);
    params = {{"records", n}, {"vocab", vocab}, {"doc_len", doc_len}, {"input_runs", runs}};
    for (uint64_t i = 0; i < n; i++) records.push_back({doc_key(i), make_doc(g, vocab, doc_len)});
    if (app == "paircount") {
      params["candidates"] = want;
      std::set<std::string> pairs;
      for (uint64_t i = 0; i < want; i++) {
        uint64_t a = rnd_below(g, vocab);
        uint64_t b = rnd_below(g, vocab);
        if (a == b) b = (b + 1) % vocab;
        pairs.insert(vocab_word(a) + " " + vocab_word(b));
      }
      app_config["candidates"] = pairs;
    }
  } else if (app == "edgesum") {
    uint64_t vertices = param(params, "vertices", 500);
    uint64_t degree = param(params, "degree", 4);
    uint64_t weight_range = param(params, "weight_range", 100);
    params = {{"vertices", vertices},
              {"degree", degree},
              {"weight_range", weight_range},
              {"input_runs", runs}};
    for (uint64_t i = 0; i < vertices; i++) {
      records.push_back({vertex_key(i),
                         make_weighted_adjacency(g, i, vertices, degree, weight_range)});
    }
  } else if (app == "pagerank") {
    kind = "iterative";
    uint64_t vertices = param(params, "vertices", 1000);
    uint64_t degree = param(params, "degree", 3);
    double d = params.value("d", 0.85);
    // Uniform starting rank. Scaling it up makes an absolute change-filter
    // threshold proportionally finer without touching the app.
    double init_rank = params.value("init_rank", 1.0);
    params = {{"vertices", vertices},
              {"degree", degree},
              {"d", d},
              {"init_rank", init_rank},
              {"input_runs", runs}};
    app_config["d"] = d;
    // degree >= 1 keeps every vertex non-dangling, so total rank mass is
    // conserved across iterations.
    for (uint64_t i = 0; i < vertices; i++) {
      records.push_back({vertex_key(i), make_neighbor_list(g, vertices, degree)});
      state.push_back({vertex_key(i), format_double(init_rank)});
    }
  } else if (app == "sssp") {
    kind = "iterative";
    uint64_t vertices = param(params, "vertices", 100);
    uint64_t degree = param(params, "degree", 3);
    uint64_t weight_range = param(params, "weight_range", 10);
    if (vertices < 2) throw_error(ErrorCode::kConfig, "sssp needs at least 2 vertices");
    params = {{"vertices", vertices},
              {"degree", degree},
              {"weight_range", weight_range},
              {"input_runs", runs}};
    std::string source = vertex_key(0);
    app_config["source"] = source;
    for (uint64_t i = 0; i < vertices; i++) {
      // A ring edge guarantees every vertex is reachable from the source;
      // extra random edges make shorter detours.
      std::map<uint64_t, double> targets;
      targets.emplace((i + 1) % vertices, static_cast<double>(1 + rnd_below(g, weight_range)));
      uint64_t extra = rnd_below(g, degree);
      for (uint64_t e = 0; e < extra; e++) {
        uint64_t t = rnd_below(g, vertices);
        if (t == i) continue;
        targets.emplace(t, static_cast<double>(1 + rnd_below(g, weight_range)));
      }
      std::vector<std::pair<std::string, double>> adj;
      for (const auto& [t, w] : targets) adj.emplace_back(vertex_key(t), w);
      records.push_back({vertex_key(i), format_weighted_adjacency(adj)});
      state.push_back({vertex_key(i), i == 0 ? "0" : "inf"});
    }
  } else if (app == "kmeans") {
    kind = "iterative";
    uint64_t points = param(params, "points", 200);
    uint64_t clusters = param(params, "clusters", 4);
    uint64_t dims = param(params, "dims", 2);
    params = {{"points", points}, {"clusters", clusters}, {"dims", dims}, {"input_runs", runs}};
    for (uint64_t i = 0; i < points; i++) {
      records.push_back({point_key(i), make_point(g, clusters, dims)});
    }
    std::vector<std::pair<std::string, std::vector<double>>> centroids;
    for (uint64_t c = 0; c < clusters; c++) {
      auto coords = cluster_center(c, dims);
      for (auto& x : coords) x += rnd_unit(g) * 2.0 - 1.0;
      centroids.emplace_back(std::to_string(c), coords);
    }
    state.push_back({"centroids", format_centroids(centroids)});
    app_config["k"] = clusters;
  } else if (app == "gimv") {
    kind = "iterative";
    uint64_t blocks = param(params, "blocks", 4);
    uint64_t block_size = param(params, "block_size", 2);
    params = {{"blocks", blocks}, {"block_size", block_size}, {"input_runs", runs}};
    app_config["block_size"] = block_size;
    uint64_t n = blocks * block_size;
    std::vector<std::vector<double>> m(n, std::vector<double>(n));
    for (uint64_t i = 0; i < n; i++) {
      for (uint64_t j = 0; j < n; j++) m[i][j] = 0.05 + rnd_unit(g);
    }
    // Column-stochastic, so repeated multiplication conserves the vector sum.
    for (uint64_t j = 0; j < n; j++) {
      double sum = 0;
      for (uint64_t i = 0; i < n; i++) sum += m[i][j];
      for (uint64_t i = 0; i < n; i++) m[i][j] /= sum;
    }
    for (uint64_t bi = 0; bi < blocks; bi++) {
      for (uint64_t bj = 0; bj < blocks; bj++) {
        std::string rows;
        for (uint64_t r = 0; r < block_size; r++) {
          std::vector<double> row(block_size);
          for (uint64_t c = 0; c < block_size; c++) row[c] = m[bi * block_size + r][bj * block_size + c];
          if (!rows.empty()) rows += ';';
          rows += format_vector(row);
        }
        records.push_back({fmt_id("%03llu", bi) + "," + fmt_id("%03llu", bj), rows});
      }
    }
    for (uint64_t bj = 0; bj < blocks; bj++) {
      state.push_back({fmt_id("%03llu", bj),
                       format_vector(std::vector<double>(block_size, 1.0 / static_cast<double>(n)))});
    }
  } else {
    throw_error(ErrorCode::kConfig, "unknown app '" + app + "'");
  }

  if (kind == "one-step") {
    write_split_runs(out_dir, records, runs, &run_counts);
  } else {
    write_split_runs(out_dir / "structure", records, runs, &run_counts);
    std::vector<uint64_t> state_counts;
    write_split_runs(out_dir / "state", state, 1, &state_counts);
  }
  if (!app_config.empty()) write_json(out_dir / "app_config.json", app_config);

  summary.records = records.size();
  summary.state_records = state.size();
  summary.runs = runs;
  summary.params = params;
  write_json(out_dir / "gen_manifest.json", {{"app", app},
                                             {"kind", kind},
                                             {"seed", seed},
                                             {"params", params},
                                             {"run_counts", run_counts},
                                             {"records", summary.records},
                                             {"state_records", summary.state_records}});
  return summary;
}

namespace {

// Fresh replacement value for one record, drawn from the base distribution.
// For sssp the targets stay put and only the weights re-roll, so a delta is
// a pure weight perturbation of the same graph.
std::string fresh_value(const std::string& app, std::mt19937_64& g, const std::string& old_value,
                        const nlohmann::json& p) {
  if (app == "wordcount" || app == "wordcount-acc" || app == "paircount") {
    return make_doc(g, param(p, "vocab", 200), param(p, "doc_len", 8));
  }
  if (app == "edgesum") {
    return make_weighted_adjacency(g, param(p, "vertices", 500), param(p, "vertices", 500),
                                   param(p, "degree", 4), param(p, "weight_range", 100));
  }
  if (app == "pagerank") {
    return make_neighbor_list(g, param(p, "vertices", 1000), param(p, "degree", 3));
  }
  if (app == "sssp") {
    uint64_t weight_range = param(p, "weight_range", 10);
    auto adj = parse_weighted_adjacency(old_value);
    for (auto& [t, w] : adj) w = static_cast<double>(1 + rnd_below(g, weight_range));
    return format_weighted_adjacency(adj);
  }
  if (app == "kmeans") {
    return make_point(g, param(p, "clusters", 4), param(p, "dims", 2));
  }
  throw_error(ErrorCode::kConfig, "no delta generator for app '" + app + "'");
}

std::string fresh_key(const std::string& app, uint64_t index) {
  if (app == "wordcount" || app == "wordcount-acc" || app == "paircount") return doc_key(index);
  if (app == "edgesum" || app == "pagerank" || app == "sssp") return vertex_key(index);
  if (app == "kmeans") return point_key(index);
  throw_error(ErrorCode::kConfig, "no delta generator for app '" + app + "'");
}

// New keys never collide with live ones: a fresh vertex points into the base
// id space but its own id starts past the base count.
std::string fresh_insert_value(const std::string& app, std::mt19937_64& g,
                               const nlohmann::json& p) {
  if (app == "sssp") {
    uint64_t vertices = param(p, "vertices", 100);
    return make_weighted_adjacency(g, vertices, vertices, param(p, "degree", 3),
                                   param(p, "weight_range", 10));
  }
  return fresh_value(app, g, std::string(), p);
}

}  // namespace

DeltaSummary generate_delta(const std::string& app, const fs::path& base_dir, double fraction,
                            const std::string& ops, uint64_t seed, const fs::path& out_dir) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw_error(ErrorCode::kConfig, "delta fraction must lie in [0, 1]");
  }
  if (ops != "mixed" && ops != "update" && ops != "delete" && ops != "insert") {
    throw_error(ErrorCode::kConfig, "ops must be one of mixed|update|delete|insert");
  }

  fs::path manifest_path = base_dir / "gen_manifest.json";
  if (!fs::exists(manifest_path)) {
    throw_error(ErrorCode::kConfig, "no gen_manifest.json under " + base_dir.string());
  }
  nlohmann::json manifest;
  {
    std::ifstream in(manifest_path);
    in >> manifest;
  }
  if (manifest.value("app", "") != app) {
    throw_error(ErrorCode::kConfig, "base directory was generated for app '" +
                                        manifest.value("app", std::string("?")) + "', not '" +
                                        app + "'");
  }
  if (app == "gimv") {
    throw_error(ErrorCode::kConfig, "gimv has no delta generator");
  }
  nlohmann::json p = manifest.value("params", nlohmann::json::object());
  bool iterative = manifest.value("kind", "one-step") == "iterative";

  fs::path records_dir = iterative ? base_dir / "structure" : base_dir;
  struct BaseRecord {
    uint32_t run = 0;
    uint64_t pos = 0;
    KvRecord rec;
  };
  std::vector<BaseRecord> base;
  std::vector<uint64_t> run_counts;
  auto runs = list_run_files(records_dir);
  for (uint32_t t = 0; t < runs.size(); t++) {
    auto records = read_kv_run(runs[t]);
    run_counts.push_back(records.size());
    for (uint64_t pos = 0; pos < records.size(); pos++) {
      base.push_back({t, pos, std::move(records[pos])});
    }
  }
  uint64_t n = base.size();
  uint64_t m = static_cast<uint64_t>(fraction * static_cast<double>(n) + 1e-9);

  std::mt19937_64 g(seed);
  DeltaSummary summary;
  summary.app = app;
  summary.base_records = n;
  std::vector<DeltaRecord> out;
  std::vector<uint64_t> appended = run_counts;  // next free position per run
  uint64_t fresh_index = manifest.value("records", n);

  if (ops == "insert") {
    uint32_t run_count = runs.empty() ? 1 : static_cast<uint32_t>(runs.size());
    for (uint64_t i = 0; i < m; i++) {
      uint32_t t = static_cast<uint32_t>(i % run_count);
      out.push_back(DeltaRecord{fresh_key(app, fresh_index++), fresh_insert_value(app, g, p),
                                DeltaSign::kInsert, MapKey{t, appended[t]++}});
      summary.inserts++;
    }
  } else {
    // Partial Fisher-Yates: the first m slots end up holding a uniform
    // m-subset, then ascending order keeps op draws deterministic.
    std::vector<uint64_t> idx(n);
    for (uint64_t i = 0; i < n; i++) idx[i] = i;
    for (uint64_t i = 0; i < m && n; i++) {
      uint64_t j = i + rnd_below(g, n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    for (uint64_t i : idx) {
      const BaseRecord& b = base[i];
      int op;  // 0 update-in-place, 1 delete, 2 replace with a new key
      if (ops == "mixed") {
        uint64_t r = rnd_below(g, 4);
        op = r < 2 ? 0 : (r == 2 ? 1 : 2);
      } else if (ops == "update") {
        op = 0;
      } else {
        op = 1;
      }
      out.push_back(DeltaRecord{b.rec.key, b.rec.value, DeltaSign::kDelete, MapKey{b.run, b.pos}});
      summary.touched++;
      summary.deletes++;
      if (op == 0) {
        out.push_back(DeltaRecord{b.rec.key, fresh_value(app, g, b.rec.value, p),
                                  DeltaSign::kInsert, MapKey{b.run, appended[b.run]++}});
        summary.inserts++;
      } else if (op == 2) {
        out.push_back(DeltaRecord{fresh_key(app, fresh_index++), fresh_insert_value(app, g, p),
                                  DeltaSign::kInsert, MapKey{b.run, appended[b.run]++}});
        summary.inserts++;
      }
    }
  }

  std::sort(out.begin(), out.end(), [](const DeltaRecord& a, const DeltaRecord& b) {
    if (a.key != b.key) return a.key < b.key;
    return (a.sign == DeltaSign::kDelete) > (b.sign == DeltaSign::kDelete);
  });
  fs::create_directories(out_dir);
  write_delta_run(out_dir / "part-00000.run", out);
  summary.delta_records = out.size();
  write_json(out_dir / "delta_summary.json", summary.to_json());
  return summary;
}

}  // namespace imr
