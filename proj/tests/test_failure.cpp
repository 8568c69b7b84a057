#include <doctest.h>

#include <fstream>

#include "imr/checkpoint.hpp"
#include "imr/datagen.hpp"
#include "oracle_util.hpp"

using namespace imr;
using namespace itest;

namespace {

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void put_bytes(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

void check_same_partitions(const IterRun& a, const IterRun& b, int partitions) {
  for (int p = 0; p < partitions; p++) {
    CHECK(file_bytes(a.wd.state_run(p)) == file_bytes(b.wd.state_run(p)));
    CHECK(file_bytes(a.wd.output_run(p)) == file_bytes(b.wd.output_run(p)));
    CHECK(file_bytes(a.wd.partition_dir(p) / "mrbg.dat") ==
          file_bytes(b.wd.partition_dir(p) / "mrbg.dat"));
  }
}

}  // namespace

TEST_CASE("failure plans parse, validate, and fire each event once") {
  auto plan = FailurePlan::from_json(nlohmann::json::parse(R"({
    "failures": [
      {"kind": "PRIME_MAP", "iteration": 2, "partition": 1, "trigger": "MID"},
      {"kind": "PRIME_REDUCE", "iteration": 3, "partition": 0},
      {"kind": "WORKER", "iteration": 4, "worker": 2}
    ]
  })"));
  CHECK(plan.remaining() == 3);
  CHECK(plan.events()[1].trigger == FailureTrigger::kStart);  // default

  CHECK_FALSE(plan.should_fail(FailureKind::kPrimeMap, 2, 1, FailureTrigger::kStart));
  CHECK_FALSE(plan.should_fail(FailureKind::kPrimeMap, 1, 1, FailureTrigger::kMid));
  CHECK(plan.should_fail(FailureKind::kPrimeMap, 2, 1, FailureTrigger::kMid));
  CHECK_FALSE(plan.should_fail(FailureKind::kPrimeMap, 2, 1, FailureTrigger::kMid));

  CHECK_FALSE(plan.worker_failure(3).has_value());
  auto w = plan.worker_failure(4);
  REQUIRE(w.has_value());
  CHECK(*w == 2);
  CHECK_FALSE(plan.worker_failure(4).has_value());

  CHECK(plan.should_fail(FailureKind::kPrimeReduce, 3, 0, FailureTrigger::kStart));
  CHECK(plan.remaining() == 0);

  CHECK_THROWS_AS(FailurePlan::from_json(nlohmann::json::parse(
                      R"({"failures": [{"kind": "BAD", "iteration": 1, "partition": 0}]})")),
                  ImrError);
  // Worker deaths happen between iterations; a mid-task trigger is invalid.
  CHECK_THROWS_AS(
      FailurePlan::from_json(nlohmann::json::parse(
          R"({"failures": [{"kind": "WORKER", "iteration": 1, "worker": 0, "trigger": "MID"}]})")),
      ImrError);
  CHECK_THROWS_AS(FailurePlan::load(test_dir("failure_plan") / "missing.json"), ImrError);
}

TEST_CASE("scheduler reassigns failed partitions round-robin over survivors") {
  TaskScheduler sched(6, 3);
  for (int p = 0; p < 6; p++) CHECK(sched.worker_for(p) == p % 3);
  CHECK(sched.healthy_workers() == 3);

  sched.fail_worker(1);
  CHECK(sched.worker_failed(1));
  CHECK(sched.healthy_workers() == 2);
  // Partitions 1 and 4 held by worker 1 move to {0, 2} in partition order.
  CHECK(sched.assignment() == std::vector<int>{0, 0, 2, 0, 2, 2});

  sched.fail_worker(0);
  CHECK(sched.assignment() == std::vector<int>{2, 2, 2, 2, 2, 2});

  CHECK_THROWS_AS(sched.fail_worker(2), ImrError);
  CHECK_THROWS_AS(TaskScheduler(0, 2), ImrError);
  CHECK_THROWS_AS(TaskScheduler(2, 0), ImrError);
}

TEST_CASE("checkpoints round-trip partition files and flag corruption") {
  auto dir = test_dir("ckpt_roundtrip");
  auto wd = Workdir::create(dir / "wd", 2);
  Metrics metrics;
  write_kv_run(wd.structure_run(0), {{"a", "1"}, {"b", "2"}});
  write_kv_run(wd.state_run(0), {{"a", "10"}});
  write_kv_run(wd.state_run(1), {{"z", "99"}});

  write_checkpoint(wd, 0, 2, metrics);
  CHECK(verify_checkpoint(wd, 0));

  write_kv_run(wd.state_run(0), {{"a", "changed"}});
  write_checkpoint(wd, 1, 2, metrics);
  write_kv_run(wd.state_run(0), {{"a", "again"}});
  write_checkpoint(wd, 2, 2, metrics);

  auto all = list_checkpoints(wd);
  REQUIRE(all.size() == 3);
  CHECK(all[0].iteration == 0);
  CHECK(all[2].iteration == 2);
  CHECK(all[0].files.size() == 3);

  // Restore rolls the partition back and drops carried-file kinds the
  // checkpoint did not contain.
  std::string original = file_bytes(wd.state_run(0));
  write_kv_run(wd.state_run(0), {{"x", "spurious"}});
  write_kv_run(wd.cpc_run(0), {{"x", "leftover"}});
  restore_partition(wd, 2, 0);
  CHECK(file_bytes(wd.state_run(0)) == original);
  CHECK_FALSE(fs::exists(wd.cpc_run(0)));
  CHECK(fs::exists(wd.structure_run(0)));

  // Flip one byte inside checkpoint 2: its digest no longer matches, so
  // the newest usable checkpoint becomes 1.
  fs::path victim = wd.checkpoints_dir() / "2" / "00000" / "state.run";
  std::string bytes = file_bytes(victim);
  bytes[bytes.size() / 2] ^= 0x01;
  put_bytes(victim, bytes);
  CHECK_FALSE(verify_checkpoint(wd, 2));
  CHECK(verify_checkpoint(wd, 1));
  REQUIRE(latest_valid_checkpoint(wd, 2).has_value());
  CHECK(*latest_valid_checkpoint(wd, 2) == 1);
  CHECK(*latest_valid_checkpoint(wd, 1) == 1);

  CHECK_THROWS_AS(restore_partition(wd, 7, 0), ImrError);
}

TEST_CASE("full runs with injected failures match failure-free byte for byte") {
  auto dir = test_dir("failure_full_iter");
  generate_input("pagerank", {{"vertices", 40}}, 909, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec;
  spec.app = "pagerank";
  spec.mode = JobMode::kIter;
  spec.partitions = 4;
  spec.workers = 3;
  spec.tol = 1e-13;
  spec.max_iters = 8;
  spec.checkpoints_enabled = true;
  spec.checkpoint_interval = 2;

  auto clean = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                             list_run_files(dir / "in" / "state"), dir / "clean");
  CHECK(clean.outcome.failures_recovered == 0);

  auto plan = FailurePlan::from_json(nlohmann::json::parse(R"({
    "failures": [
      {"kind": "PRIME_MAP", "iteration": 2, "partition": 1, "trigger": "START"},
      {"kind": "PRIME_MAP", "iteration": 2, "partition": 3, "trigger": "MID"},
      {"kind": "PRIME_REDUCE", "iteration": 4, "partition": 0, "trigger": "START"},
      {"kind": "PRIME_REDUCE", "iteration": 4, "partition": 2, "trigger": "MID"},
      {"kind": "WORKER", "iteration": 5, "worker": 1},
      {"kind": "WORKER", "iteration": 6, "worker": 0}
    ]
  })"));
  auto hurt = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "hurt", &plan);
  CHECK(plan.remaining() == 0);
  CHECK(hurt.outcome.failures_recovered == 6);
  CHECK(hurt.metrics->counter("task_failures") == 4);
  CHECK(hurt.metrics->counter("worker_failures") == 2);
  CHECK(hurt.outcome.iterations == clean.outcome.iterations);
  check_same_partitions(clean, hurt, spec.partitions);
}

TEST_CASE("task retries stay exact without checkpoints") {
  auto dir = test_dir("failure_no_ckpt");
  generate_input("pagerank", {{"vertices", 30}}, 910, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec;
  spec.app = "pagerank";
  spec.mode = JobMode::kIter;
  spec.partitions = 3;
  spec.workers = 3;
  spec.tol = 1e-13;
  spec.max_iters = 6;

  auto clean = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                             list_run_files(dir / "in" / "state"), dir / "clean");

  // Mid-task deaths leave half-written spills and an unsealed append batch
  // behind; the retry and the sealed-batch rule must hide both.
  auto plan = FailurePlan::from_json(nlohmann::json::parse(R"({
    "failures": [
      {"kind": "PRIME_MAP", "iteration": 2, "partition": 0, "trigger": "MID"},
      {"kind": "PRIME_REDUCE", "iteration": 3, "partition": 1, "trigger": "MID"},
      {"kind": "WORKER", "iteration": 4, "worker": 2}
    ]
  })"));
  auto hurt = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "hurt", &plan);
  CHECK(plan.remaining() == 0);
  CHECK(hurt.outcome.failures_recovered == 3);
  check_same_partitions(clean, hurt, spec.partitions);
}

TEST_CASE("incremental refresh recovers from injected failures") {
  auto dir = test_dir("failure_incr_iter");
  generate_input("pagerank", {{"vertices", 50}}, 911, dir / "in");
  auto app = *make_app("pagerank", {}).iterative;

  JobSpec spec;
  spec.app = "pagerank";
  spec.mode = JobMode::kIter;
  spec.partitions = 4;
  spec.workers = 3;
  spec.tol = 1e-12;
  spec.max_iters = 300;
  auto base = run_full_iter(spec, app, list_run_files(dir / "in" / "structure"),
                            list_run_files(dir / "in" / "state"), dir / "base");
  REQUIRE(base.outcome.converged);
  generate_delta("pagerank", dir / "in", 0.1, "mixed", 21, dir / "delta");

  JobSpec ispec = spec;
  ispec.mode = JobMode::kIncrIter;
  ispec.checkpoints_enabled = true;
  ispec.checkpoint_interval = 2;
  auto clean = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                             list_run_files(dir / "delta"), dir / "clean");
  REQUIRE(clean.outcome.converged);
  REQUIRE(clean.outcome.iterations >= 4);

  auto plan = FailurePlan::from_json(nlohmann::json::parse(R"({
    "failures": [
      {"kind": "PRIME_MAP", "iteration": 1, "partition": 2, "trigger": "MID"},
      {"kind": "PRIME_REDUCE", "iteration": 2, "partition": 1, "trigger": "MID"},
      {"kind": "WORKER", "iteration": 3, "worker": 0}
    ]
  })"));
  auto hurt = run_incr_iter(ispec, app, base.wd.snapshot_dir(),
                            list_run_files(dir / "delta"), dir / "hurt", &plan);
  CHECK(plan.remaining() == 0);
  CHECK(hurt.outcome.failures_recovered == 3);
  CHECK(hurt.outcome.iterations == clean.outcome.iterations);
  check_same_partitions(clean, hurt, ispec.partitions);
}
