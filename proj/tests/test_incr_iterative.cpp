#include <doctest.h>

#include <cmath>
#include <fstream>

#include "imr/datagen.hpp"
#include "imr/mrbg_store.hpp"
#include "oracle_util.hpp"

using namespace imr;
using namespace itest;

namespace {

JobSpec make_spec(int partitions, int workers, double tol, int max_iters) {
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

// Every key's stored chunk must carry exactly one identity edge equal to the
// visible state value; the invariant a follow-on delta job depends on.
void check_identity_consistency(const Workdir& wd, int partitions) {
  for (int p = 0; p < partitions; p++) {
    StoreOptions options;
    MrbgStore store(wd.partition_dir(p), options);
    auto state = read_kv_run(wd.state_run(p));
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

// Per-key additive drift: value moves by its structure increment each
// iteration, so changed-fraction and convergence behavior are hand-tunable.
IterativeApp shift_app() {
  IterativeApp app;
  app.project_kind = ProjectKind::kOne2One;
  app.project = [](const std::string& sk) { return sk; };
  app.init = [](const std::string&) { return std::string("0"); };
  app.map = [](const std::string& sk, const std::string& sv, const std::string&,
               const std::string& dv, const MapEmit& emit) {
    emit(sk, format_double(parse_double(dv) + parse_double(sv)));
  };
  app.reduce = [](const std::string&, const std::string&,
                  const std::vector<std::string>& values) {
    return values.empty() ? std::string("0") : values[0];
  };
  app.difference = [](const std::string& a, const std::string& b) {
    return std::fabs(parse_double(a) - parse_double(b));
  };
  return app;
}

// One driver key "d" that advances by 10 every iteration and one probe key
// "x" fed osc(d): 0.6 on odd steps, 0 on even ones. The probe's oscillation
// is what separates accumulated filtering from plain filtering.
IterativeApp drift_app() {
  IterativeApp app;
  app.project_kind = ProjectKind::kMany2One;
  app.project = [](const std::string&) { return std::string("d"); };
  app.init = [](const std::string&) { return std::string("0"); };
  app.map = [](const std::string&, const std::string& sv, const std::string&,
               const std::string& dv, const MapEmit& emit) {
    double d = parse_double(dv);
    if (sv == "anchor") {
      emit("d", format_double(d + 10.0));
    } else {
      int step = static_cast<int>(d / 10.0);
      emit("x", format_double(step % 2 ? 0.6 : 0.0));
    }
  };
  app.reduce = [](const std::string&, const std::string&,
                  const std::vector<std::string>& values) {
    return values.empty() ? std::string("0") : values[0];
  };
  app.difference = [](const std::string& a, const std::string& b) {
    return std::fabs(parse_double(a) - parse_double(b));
  };
  return app;
}

}  // namespace

TEST_CASE("pagerank structure delta matches a fresh run on the updated graph") {
  auto dir = test_dir("incr_pagerank_oracle");
  generate_input("pagerank", {{"vertices", 70}, {"degree", 3}}, 101, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec = make_spec(3, 2, 1e-13, 400);
  spec.app = "pagerank";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  REQUIRE(base.outcome.converged);

  generate_delta("pagerank", dir / "in", 0.1, "mixed", 7, dir / "delta");
  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "incr");
  CHECK(incr.outcome.converged);

  auto updated = apply_delta(list_run_files(dir / "in" / "structure"),
                             list_run_files(dir / "delta"));
  write_run_dir(dir / "updated_structure", updated);
  auto oracle = run_full_iter(spec, app, {dir / "updated_structure" / "part-00000.run"},
                              list_run_files(dir / "in" / "state"), dir / "oracle");
  REQUIRE(oracle.outcome.converged);

  auto got = read_output(incr.wd);
  auto expect = read_output(oracle.wd);
  REQUIRE(got.size() == expect.size());
  for (const auto& [k, v] : expect) {
    REQUIRE(got.count(k));
    double a = parse_double(got.at(k));
    double b = parse_double(v);
    CHECK(std::fabs(a - b) <= 1e-9 * std::max(1.0, std::fabs(b)));
  }
}

TEST_CASE("sssp weight updates refresh to exact shortest paths") {
  auto dir = test_dir("incr_sssp_exact");
  generate_input("sssp", {{"vertices", 50}, {"degree", 3}}, 202, dir / "in");
  auto app = *make_app("sssp", {{"source", "v000000"}}).iterative;

  // Weight increases wash out stale short distances only after enough
  // relaxation rounds, so leave plenty of headroom.
  JobSpec spec = make_spec(3, 2, 0.0, 600);
  spec.app = "sssp";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  REQUIRE(base.outcome.converged);

  generate_delta("sssp", dir / "in", 0.1, "update", 9, dir / "delta");
  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "incr");
  CHECK(incr.outcome.converged);

  auto updated = apply_delta(list_run_files(dir / "in" / "structure"),
                             list_run_files(dir / "delta"));
  std::map<std::string, std::string> graph;
  for (const auto& r : updated) graph[r.key] = r.value;
  auto expect = dijkstra_oracle(graph, "v000000");
  auto got = read_output(incr.wd);
  REQUIRE(got.size() == expect.size());
  for (const auto& [k, v] : got) {
    CHECK(parse_double(v) == expect.at(k));  // integer weights: exact
  }
}

TEST_CASE("empty delta converges immediately with untouched state") {
  auto dir = test_dir("incr_empty_delta");
  generate_input("pagerank", {{"vertices", 30}}, 303, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec = make_spec(2, 2, 1e-12, 200);
  spec.app = "pagerank";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  std::vector<std::string> before;
  for (int p = 0; p < 2; p++) before.push_back(file_bytes(base.wd.state_run(p)));

  write_delta_run(dir / "empty.run", {});
  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(), {dir / "empty.run"},
                            dir / "incr");
  CHECK(incr.outcome.converged);
  CHECK(incr.outcome.iterations == 1);
  CHECK(incr.metrics->counter("affected_reduce_keys") == 0);
  for (int p = 0; p < 2; p++) CHECK(file_bytes(incr.wd.state_run(p)) == before[p]);
}

TEST_CASE("insert-only delta seeds state for brand-new keys") {
  auto dir = test_dir("incr_insert_only");
  generate_input("pagerank", {{"vertices", 40}}, 404, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec = make_spec(3, 2, 1e-13, 400);
  spec.app = "pagerank";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");

  generate_delta("pagerank", dir / "in", 0.2, "insert", 11, dir / "delta");
  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "incr");
  CHECK(incr.outcome.converged);

  auto got = read_output(incr.wd);
  CHECK(got.size() == 48);  // 40 base vertices + 8 inserted
  for (int i = 40; i < 48; i++) {
    char key[16];
    std::snprintf(key, sizeof key, "v%06d", i);
    CHECK(got.count(key));
  }

  auto updated = apply_delta(list_run_files(dir / "in" / "structure"),
                             list_run_files(dir / "delta"));
  write_run_dir(dir / "updated_structure", updated);
  auto oracle = run_full_iter(spec, app, {dir / "updated_structure" / "part-00000.run"},
                              list_run_files(dir / "in" / "state"), dir / "oracle");
  auto expect = read_output(oracle.wd);
  REQUIRE(got.size() == expect.size());
  for (const auto& [k, v] : expect) {
    CHECK(std::fabs(parse_double(got.at(k)) - parse_double(v)) <=
          1e-9 * std::max(1.0, std::fabs(parse_double(v))));
  }
}

TEST_CASE("incremental refresh is byte-identical across worker counts") {
  auto dir = test_dir("incr_worker_det");
  generate_input("pagerank", {{"vertices", 45}}, 505, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec = make_spec(3, 2, 1e-10, 150);
  spec.app = "pagerank";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  generate_delta("pagerank", dir / "in", 0.1, "mixed", 13, dir / "delta");

  auto run_with = [&](int workers, const char* tag) {
    JobSpec ispec = spec;
    ispec.mode = JobMode::kIncrIter;
    ispec.workers = workers;
    return run_incr_iter(ispec, app, base.wd.snapshot_dir(), list_run_files(dir / "delta"),
                         dir / tag);
  };
  auto a = run_with(1, "w1");
  auto b = run_with(4, "w4");
  CHECK(a.outcome.iterations == b.outcome.iterations);
  for (int p = 0; p < 3; p++) {
    CHECK(file_bytes(a.wd.state_run(p)) == file_bytes(b.wd.state_run(p)));
    CHECK(file_bytes(a.wd.output_run(p)) == file_bytes(b.wd.output_run(p)));
    CHECK(file_bytes(a.wd.partition_dir(p) / "mrbg.dat") ==
          file_bytes(b.wd.partition_dir(p) / "mrbg.dat"));
  }
}

TEST_CASE("over-threshold change fraction disables the store mid-run") {
  auto dir = test_dir("incr_auto_off");
  std::vector<KvRecord> structure, state;
  for (int i = 0; i < 10; i++) {
    char key[8];
    std::snprintf(key, sizeof key, "k%02d", i);
    structure.push_back({key, "0"});
    state.push_back({key, "0"});
  }
  write_run_dir(dir / "structure", structure);
  write_run_dir(dir / "state", state);

  auto app = shift_app();
  JobSpec spec = make_spec(2, 2, 1e-9, 1);
  spec.app = "shift";
  auto base = run_full_iter(spec, app, {dir / "structure" / "part-00000.run"},
                            {dir / "state" / "part-00000.run"}, dir / "base");
  REQUIRE(base.outcome.converged);  // all-zero increments are a fixpoint

  // Six of ten records start drifting: changed fraction 0.6 crosses the 0.5
  // auto-off default on the first delta iteration.
  std::vector<DeltaRecord> delta;
  for (int i = 0; i < 6; i++) {
    char key[8];
    std::snprintf(key, sizeof key, "k%02d", i);
    delta.push_back({key, "0", DeltaSign::kDelete, {}});
    delta.push_back({key, "10", DeltaSign::kInsert, {}});
  }
  write_delta_run(dir / "delta.run", delta);

  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  ispec.max_iters = 4;
  ispec.tol = 1e-9;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(), {dir / "delta.run"},
                            dir / "incr");
  CHECK(incr.outcome.mrbg_disabled);
  CHECK(incr.outcome.mrbg_disabled_at == 1);
  REQUIRE(incr.metrics->iterations().size() == 4);
  CHECK(incr.metrics->iterations()[0].p_delta == doctest::Approx(0.6));
  CHECK(incr.metrics->iterations()[0].mrbg_enabled);
  CHECK_FALSE(incr.metrics->iterations()[1].mrbg_enabled);

  // Full-iteration fallback keeps exactness: compare with a fresh run over
  // the updated structure, capped at the same iteration count.
  auto updated = apply_delta({dir / "structure" / "part-00000.run"}, {dir / "delta.run"});
  write_run_dir(dir / "updated", updated);
  JobSpec ospec = spec;
  ospec.max_iters = 4;
  auto oracle = run_full_iter(ospec, app, {dir / "updated" / "part-00000.run"},
                              {dir / "state" / "part-00000.run"}, dir / "oracle");
  CHECK(read_output(incr.wd) == read_output(oracle.wd));

  // The rebuilt store must be consistent again after the fallback.
  check_identity_consistency(incr.wd, ispec.partitions);
}

TEST_CASE("accumulated changes cross the filter where plain filtering stalls") {
  auto dir = test_dir("incr_cpc");
  write_run_dir(dir / "structure", {{"a", "anchor"}, {"b", "probe"}});
  write_run_dir(dir / "state", {{"d", "0"}, {"x", "0"}});

  auto app = drift_app();
  JobSpec spec = make_spec(2, 1, 0.0, 1);
  spec.app = "drift";
  auto base = run_full_iter(spec, app, {dir / "structure" / "part-00000.run"},
                            {dir / "state" / "part-00000.run"}, dir / "base");
  // One base iteration: d moved to 10, x stayed 0.
  CHECK(read_output(base.wd).at("d") == "10");

  // The delta re-inserts the anchor unchanged, so only "d" is affected at
  // iteration 1; propagation then feeds the probe from iteration 2 on with
  // per-step changes 0.6 against a threshold of 1.
  std::vector<DeltaRecord> delta = {{"a", "anchor", DeltaSign::kDelete, {}},
                                    {"a", "anchor", DeltaSign::kInsert, {}}};
  write_delta_run(dir / "delta.run", delta);

  auto run_filtered = [&](bool cpc, int max_iters, const char* tag) {
    JobSpec ispec = spec;
    ispec.mode = JobMode::kIncrIter;
    ispec.filter_thresh = 1.0;
    ispec.cpc_enabled = cpc;
    ispec.max_iters = max_iters;
    ispec.auto_off_threshold = 2.0;  // keep the store engaged throughout
    return run_incr_iter(ispec, app, base.wd.snapshot_dir(), {dir / "delta.run"},
                         dir / tag);
  };

  // Plain filtering: x's net change from its visible value is 0.6 or 0,
  // never above 1, so x is suppressed forever.
  auto plain = run_filtered(false, 4, "plain");
  for (const auto& row : plain.metrics->iterations()) CHECK(row.propagated_kv == 1);
  CHECK(read_output(plain.wd).at("x") == "0");
  CHECK(plain.metrics->counter("filter_suppressed") > 0);

  // Accumulated filtering: |0.6| + |-0.6| = 1.2 crosses the threshold on the
  // fourth iteration even though the net change is zero.
  auto cpc3 = run_filtered(true, 3, "cpc3");
  for (const auto& row : cpc3.metrics->iterations()) CHECK(row.propagated_kv == 1);
  // After three iterations the probe's pending accumulation sits at 0.6.
  bool found = false;
  for (int p = 0; p < 2; p++) {
    if (!fs::exists(cpc3.wd.cpc_run(p))) continue;
    for (const auto& rec : read_kv_run(cpc3.wd.cpc_run(p))) {
      if (rec.key == "x") {
        auto e = decode_cpc_value(rec.key, rec.value);
        CHECK(e.accumulated == doctest::Approx(0.6));
        CHECK(parse_double(e.last_computed) == doctest::Approx(0.6));
        found = true;
      }
    }
  }
  CHECK(found);

  auto cpc4 = run_filtered(true, 4, "cpc4");
  REQUIRE(cpc4.metrics->iterations().size() == 4);
  CHECK(cpc4.metrics->iterations()[3].propagated_kv == 2);  // x finally emits
}

TEST_CASE("tolerance stop leaves identity edges patched to final state") {
  auto dir = test_dir("incr_fixup");
  generate_input("pagerank", {{"vertices", 80}}, 606, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec = make_spec(3, 2, 1e-12, 300);
  spec.app = "pagerank";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");

  generate_delta("pagerank", dir / "in", 0.03, "update", 15, dir / "delta");
  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  ispec.tol = 0.05;             // stop early, while changes are still in flight
  ispec.auto_off_threshold = 2.0;  // isolate the fixup path from auto-off
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "incr");
  CHECK(incr.outcome.converged);
  CHECK_FALSE(incr.outcome.mrbg_disabled);

  check_identity_consistency(incr.wd, ispec.partitions);

  // A follow-up refresh from the patched store with no further changes must
  // come back converged without moving anything.
  write_delta_run(dir / "empty.run", {});
  auto again = run_incr_iter(ispec, app, incr.wd.snapshot_dir(), {dir / "empty.run"},
                             dir / "again");
  CHECK(again.outcome.converged);
  CHECK(again.outcome.iterations == 1);
  CHECK(read_output(again.wd) == read_output(incr.wd));
}

TEST_CASE("kmeans point delta falls back to full runs and matches lloyd") {
  auto dir = test_dir("incr_kmeans");
  generate_input("kmeans", {{"points", 60}, {"clusters", 3}}, 707, dir / "in");
  auto app = *make_app("kmeans", {}).iterative;

  JobSpec spec = make_spec(3, 2, 1e-12, 30);
  spec.app = "kmeans";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  REQUIRE(base.outcome.converged);
  auto snapshot_centroids = read_output(base.wd).at("centroids");

  generate_delta("kmeans", dir / "in", 0.3, "mixed", 17, dir / "delta");
  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "incr");
  CHECK(incr.outcome.converged);
  CHECK(incr.outcome.mrbg_disabled);
  CHECK(incr.outcome.mrbg_disabled_at == 1);

  auto updated = apply_delta(list_run_files(dir / "in" / "structure"),
                             list_run_files(dir / "delta"));
  std::vector<std::vector<double>> points;
  for (const auto& r : updated) points.push_back(parse_vector(r.value));
  auto expect = lloyd_oracle(points, snapshot_centroids, 60, 1e-12);

  auto got = parse_centroids(read_output(incr.wd).at("centroids"));
  REQUIRE(got.size() == expect.size());
  for (size_t c = 0; c < got.size(); c++) {
    CHECK(got[c].first == expect[c].first);
    for (size_t k = 0; k < got[c].second.size(); k++) {
      CHECK(got[c].second[k] == doctest::Approx(expect[c].second[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("affected keys equal an independent delta scan at iteration 1") {
  auto dir = test_dir("incr_affected_scan");
  generate_input("pagerank", {{"vertices", 60}}, 808, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec = make_spec(3, 2, 1e-10, 200);
  spec.app = "pagerank";
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  generate_delta("pagerank", dir / "in", 0.1, "mixed", 19, dir / "delta");

  // Independent scan: replay map over each touched record against the
  // snapshot's visible state and union the contribution keys; new inserted
  // state keys join the set through their seeded identity.
  auto visible = read_output(base.wd);
  std::set<std::string> affected;
  uint64_t scan_map_calls = 0;
  for (const auto& run : list_run_files(dir / "delta")) {
    for (const auto& d : read_delta_run(run)) {
      std::string dv = visible.count(d.key) ? visible.at(d.key) : "0.15";
      app.map(
          d.key, d.value, d.key, dv,
          [&](const std::string& k2, const std::string&) { affected.insert(k2); });
      scan_map_calls++;
      if (d.sign == DeltaSign::kInsert && !visible.count(d.key)) affected.insert(d.key);
    }
  }

  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  ispec.max_iters = 1;
  auto incr = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "incr");
  CHECK(incr.metrics->counter("affected_reduce_keys") == affected.size());
  CHECK(incr.metrics->counter("delta_map_invocations") == scan_map_calls);
}
