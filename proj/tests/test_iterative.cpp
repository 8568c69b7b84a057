#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "imr/datagen.hpp"
#include "imr/mrbg_store.hpp"
#include "oracle_util.hpp"

using namespace imr;
using namespace itest;

namespace {

JobSpec iter_spec(int partitions, int workers, double tol, int max_iters) {
  JobSpec spec;
  spec.mode = JobMode::kIter;
  spec.partitions = partitions;
  spec.workers = workers;
  spec.tol = tol;
  spec.max_iters = max_iters;
  return spec;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("structure records land in the partition of their state key") {
  auto dir = test_dir("iter_partitioning");
  generate_input("gimv", {{"blocks", 4}, {"block_size", 2}}, 3, dir / "in");

  JobSpec spec = iter_spec(3, 2, 1e-9, 1);
  spec.app = "gimv";
  auto app = *make_app("gimv", {{"block_size", 2}}).iterative;
  auto wd = Workdir::create(dir / "wd", spec.partitions);
  RunManifest manifest;
  Metrics metrics;
  partition_iterative_data(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), wd, &manifest, metrics);

  int structure_total = 0;
  for (int p = 0; p < spec.partitions; p++) {
    std::set<std::string> state_keys;
    for (const auto& rec : read_kv_run(wd.state_run(p))) {
      CHECK(fnv1a64(rec.key) % spec.partitions == static_cast<uint64_t>(p));
      state_keys.insert(rec.key);
    }
    for (const auto& rec : read_kv_run(wd.structure_run(p))) {
      StructureRecord sr = decode_structure_value(rec.key, rec.value);
      CHECK(fnv1a64(sr.pk) % spec.partitions == static_cast<uint64_t>(p));
      CHECK(state_keys.count(sr.pk));
      structure_total++;
    }
  }
  CHECK(structure_total == 16);
  REQUIRE(manifest.next_seq.size() == 2);  // generator defaults to two runs
  CHECK(manifest.next_seq[0] + manifest.next_seq[1] == 16);
}

TEST_CASE("duplicate structure or state keys are rejected") {
  auto dir = test_dir("iter_dup_keys");
  write_run_dir(dir / "s1", {{"a,x", "1"}, {"b,x", "2"}});
  write_run_dir(dir / "s2", {{"a,x", "3"}});
  write_run_dir(dir / "st", {{"x", "0"}});

  JobSpec spec = iter_spec(2, 1, 1e-9, 1);
  spec.app = "gimv";
  auto app = *make_app("gimv", {{"block_size", 1}}).iterative;
  auto wd = Workdir::create(dir / "wd", 2);
  RunManifest manifest;
  Metrics metrics;
  CHECK_THROWS_WITH_AS(
      partition_iterative_data(spec, app,
                               {dir / "s1" / "part-00000.run", dir / "s2" / "part-00000.run"},
                               {dir / "st" / "part-00000.run"}, wd, &manifest, metrics),
      doctest::Contains("duplicate"), ImrError);
}

TEST_CASE("three-vertex pagerank matches hand-computed iterations") {
  // A -> B, B -> A, C -> A. With damping 0.85 and all ranks starting at 1:
  //   iteration 1: A = 0.85*(1+1)+0.15 = 1.85, B = 0.85*1+0.15 = 1, C = 0.15
  //   iteration 2: A = 0.85*(1+0.15)+0.15 = 1.1275, B = 0.85*1.85+0.15 = 1.7225
  auto dir = test_dir("iter_pagerank_hand");
  write_run_dir(dir / "structure", {{"A", "B"}, {"B", "A"}, {"C", "A"}});
  write_run_dir(dir / "state", {{"A", "1"}, {"B", "1"}, {"C", "1"}});

  JobSpec spec = iter_spec(2, 2, 0.0, 2);
  spec.app = "pagerank";
  auto app = *make_app("pagerank", {}).iterative;
  auto run = run_full_iter(spec, app, {dir / "structure" / "part-00000.run"},
                           {dir / "state" / "part-00000.run"}, dir / "wd");

  CHECK(run.outcome.iterations == 2);
  auto out = read_output(run.wd);
  REQUIRE(out.size() == 3);
  CHECK(parse_double(out.at("A")) == doctest::Approx(1.1275).epsilon(1e-12));
  CHECK(parse_double(out.at("B")) == doctest::Approx(1.7225).epsilon(1e-12));
  CHECK(parse_double(out.at("C")) == doctest::Approx(0.15).epsilon(1e-12));
  double mass = 0;
  for (const auto& [k, v] : out) mass += parse_double(v);
  CHECK(mass == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("full iterations match an independent power iteration") {
  auto dir = test_dir("iter_pagerank_oracle");
  generate_input("pagerank", {{"vertices", 80}, {"degree", 3}}, 21, dir / "in");
  auto graph = read_kv_map(list_run_files(dir / "in" / "structure"));

  JobSpec spec = iter_spec(4, 3, 0.0, 12);
  spec.app = "pagerank";
  auto app = *make_app("pagerank", {}).iterative;
  auto run = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), dir / "wd");

  std::map<std::string, double> initial;
  for (const auto& [k, v] : graph) initial[k] = 1.0;
  auto expect = pagerank_oracle(graph, 0.85, 12, initial);
  auto out = read_output(run.wd);
  REQUIRE(out.size() == expect.size());
  for (const auto& [k, v] : out) {
    CHECK(parse_double(v) ==
          doctest::Approx(expect.at(k)).epsilon(1e-11).scale(std::fabs(expect.at(k))));
  }
}

TEST_CASE("iterative outputs are byte-identical across worker counts") {
  auto dir = test_dir("iter_worker_det");
  generate_input("pagerank", {{"vertices", 60}}, 33, dir / "in");

  auto run_with = [&](int workers, const char* tag) {
    JobSpec spec = iter_spec(3, workers, 1e-10, 40);
    spec.app = "pagerank";
    auto app = *make_app("pagerank", {}).iterative;
    return run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                         list_run_files(dir / "in" / "state"), dir / tag);
  };
  auto a = run_with(1, "wd1");
  auto b = run_with(4, "wd4");

  CHECK(a.outcome.iterations == b.outcome.iterations);
  for (int p = 0; p < 3; p++) {
    CHECK(file_bytes(a.wd.output_run(p)) == file_bytes(b.wd.output_run(p)));
    CHECK(file_bytes(a.wd.state_run(p)) == file_bytes(b.wd.state_run(p)));
  }
}

TEST_CASE("sssp converges to shortest-path distances") {
  auto dir = test_dir("iter_sssp_oracle");
  generate_input("sssp", {{"vertices", 40}, {"degree", 3}}, 44, dir / "in");
  auto graph = read_kv_map(list_run_files(dir / "in" / "structure"));

  JobSpec spec = iter_spec(3, 2, 0.0, 60);
  spec.app = "sssp";
  auto app = *make_app("sssp", {{"source", "v000000"}}).iterative;
  auto run = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), dir / "wd");
  CHECK(run.outcome.converged);

  auto expect = dijkstra_oracle(graph, "v000000");
  auto out = read_output(run.wd);
  for (const auto& [k, v] : out) {
    REQUIRE(expect.count(k));
    CHECK(parse_double(v) == expect.at(k));  // integer weights: exact
  }
}

TEST_CASE("gimv matches a dense multiply over ten iterations") {
  auto dir = test_dir("iter_gimv_oracle");
  generate_input("gimv", {{"blocks", 4}, {"block_size", 2}}, 55, dir / "in");

  // Rebuild the dense matrix and initial vector from the generated blocks.
  size_t n = 8, bs = 2;
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (const auto& [key, rows] : read_kv_map(list_run_files(dir / "in" / "structure"))) {
    size_t comma = key.find(',');
    size_t bi = std::stoul(key.substr(0, comma)), bj = std::stoul(key.substr(comma + 1));
    auto row_strs = split_tokens(rows, ';');
    for (size_t r = 0; r < row_strs.size(); r++) {
      auto coeffs = parse_vector(row_strs[r]);
      for (size_t c = 0; c < coeffs.size(); c++) m[bi * bs + r][bj * bs + c] = coeffs[c];
    }
  }
  std::vector<double> x(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < 10; it++) {
    std::vector<double> y(n, 0.0);
    for (size_t i = 0; i < n; i++) {
      for (size_t j = 0; j < n; j++) y[i] += m[i][j] * x[j];
    }
    x = y;
  }

  JobSpec spec = iter_spec(3, 2, 0.0, 10);
  spec.app = "gimv";
  auto app = *make_app("gimv", {{"block_size", 2}}).iterative;
  auto run = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), dir / "wd");
  auto out = read_output(run.wd);
  REQUIRE(out.size() == 4);
  for (const auto& [k, v] : out) {
    auto block = parse_vector(v);
    size_t bj = std::stoul(k);
    for (size_t c = 0; c < block.size(); c++) {
      CHECK(block[c] == doctest::Approx(x[bj * bs + c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("kmeans assembles complete clusters and matches lloyd") {
  auto dir = test_dir("iter_kmeans_oracle");
  generate_input("kmeans", {{"points", 90}, {"clusters", 3}}, 66, dir / "in");
  auto points_map = read_kv_map(list_run_files(dir / "in" / "structure"));
  auto initial = read_kv_map(list_run_files(dir / "in" / "state")).at("centroids");

  JobSpec spec = iter_spec(3, 2, 1e-12, 25);
  spec.app = "kmeans";
  auto app = *make_app("kmeans", {}).iterative;
  auto run = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), dir / "wd");
  CHECK(run.outcome.converged);

  std::vector<std::vector<double>> points;
  for (const auto& [k, v] : points_map) points.push_back(parse_vector(v));
  auto expect = lloyd_oracle(points, initial, 25, 1e-12);

  auto out = read_output(run.wd);
  auto got = parse_centroids(out.at("centroids"));
  REQUIRE(got.size() == expect.size());
  for (size_t c = 0; c < got.size(); c++) {
    CHECK(got[c].first == expect[c].first);
    for (size_t k = 0; k < got[c].second.size(); k++) {
      CHECK(got[c].second[k] == doctest::Approx(expect[c].second[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("edge graph rebuild leaves chunks consistent with visible state") {
  auto dir = test_dir("iter_graph_rebuild");
  generate_input("pagerank", {{"vertices", 30}}, 77, dir / "in");

  JobSpec spec = iter_spec(2, 2, 1e-10, 30);
  spec.app = "pagerank";
  auto app = *make_app("pagerank", {}).iterative;
  auto run = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), dir / "wd");

  // Every state key's chunk must exist and carry exactly one identity edge
  // holding the key's current visible value.
  for (int p = 0; p < spec.partitions; p++) {
    StoreOptions options;
    MrbgStore store(run.wd.partition_dir(p), options);
    auto state = read_kv_run(run.wd.state_run(p));
    REQUIRE(!state.empty());
    std::vector<std::string> keys;
    for (const auto& rec : state) keys.push_back(rec.key);
    auto pass = store.begin_query_pass(keys);
    for (const auto& rec : state) {
      auto chunk = pass.get(rec.key);
      REQUIRE(chunk.has_value());
      int identity_edges = 0;
      for (const auto& e : chunk->edges) {
        if (e.mk.partition == kIdentityPartition) {
          identity_edges++;
          CHECK(e.v2 == rec.value);
        }
      }
      CHECK(identity_edges == 1);
    }
  }
}

TEST_CASE("snapshot primes a byte-identical workdir") {
  auto dir = test_dir("iter_snapshot");
  generate_input("pagerank", {{"vertices", 25}}, 88, dir / "in");

  JobSpec spec = iter_spec(2, 2, 1e-10, 20);
  spec.app = "pagerank";
  auto app = *make_app("pagerank", {}).iterative;
  auto run = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                           list_run_files(dir / "in" / "state"), dir / "wd");

  auto wd2 = Workdir::create(dir / "wd2", spec.partitions);
  auto manifest = load_snapshot(run.wd.snapshot_dir(), wd2);
  CHECK(manifest.run_id == run.manifest.run_id);
  CHECK(manifest.mrbg_valid);
  for (int p = 0; p < spec.partitions; p++) {
    for (const char* name : {"structure.run", "state.run", "mrbg.dat", "mrbg.idx"}) {
      CHECK(file_bytes(run.wd.partition_dir(p) / name) ==
            file_bytes(wd2.partition_dir(p) / name));
    }
  }
}
