// imr: generate workloads, run jobs in every mode, and inspect the results.
// Commands print a JSON summary on stdout; exit code 0 means the requested
// operation (including any compare verdict) fully succeeded.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "imr/apps.hpp"
#include "imr/checkpoint.hpp"
#include "imr/common.hpp"
#include "imr/compare.hpp"
#include "imr/datagen.hpp"
#include "imr/engine.hpp"
#include "imr/failure.hpp"
#include "imr/incremental.hpp"
#include "imr/iterative.hpp"
#include "imr/metrics.hpp"
#include "imr/mrbg_store.hpp"
#include "imr/run_file.hpp"
#include "imr/workdir.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve_workdir(const std::string& flag_value, const char* what) {
  if (!flag_value.empty()) return flag_value;
  const char* env = std::getenv("IMR_WORKDIR");
  if (env && *env) return env;
  imr::throw_error(imr::ErrorCode::kConfig,
                   std::string(what) + " not given and IMR_WORKDIR is unset");
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) imr::throw_error(imr::ErrorCode::kIo, "cannot read " + path.string());
  json j;
  in >> j;
  return j;
}

// Explicit --config wins; otherwise a generated dataset's app_config.json
// rides along automatically.
json load_app_config(const std::string& config_flag, const fs::path& input_dir) {
  if (!config_flag.empty()) return load_json_file(config_flag);
  if (!input_dir.empty()) {
    fs::path candidate = input_dir / "app_config.json";
    if (fs::exists(candidate)) return load_json_file(candidate);
  }
  return json::object();
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

// --- gen-data ---------------------------------------------------------------

struct GenDataOpts {
  std::string app;
  std::string out;
  uint64_t seed = 1;
  std::map<std::string, uint64_t> knobs;  // only flags the user actually set
  double damping = 0.85;
  bool damping_set = false;
  double init_rank = 1.0;
  bool init_rank_set = false;
};

int cmd_gen_data(const GenDataOpts& o) {
  json params = json::object();
  for (const auto& [k, v] : o.knobs) params[k] = v;
  if (o.damping_set) params["d"] = o.damping;
  if (o.init_rank_set) params["init_rank"] = o.init_rank;
  auto summary = imr::generate_input(o.app, params, o.seed, o.out);
  print_json(summary.to_json());
  return 0;
}

// --- gen-delta --------------------------------------------------------------

struct GenDeltaOpts {
  std::string app;
  std::string base;
  std::string out;
  double fraction = 0.1;
  std::string ops = "mixed";
  uint64_t seed = 1;
};

int cmd_gen_delta(const GenDeltaOpts& o) {
  auto summary = imr::generate_delta(o.app, o.base, o.fraction, o.ops, o.seed, o.out);
  print_json(summary.to_json());
  return 0;
}

// --- run --------------------------------------------------------------------

struct RunOpts {
  std::string app;
  std::string mode;
  std::string input;
  std::string structure;
  std::string delta;
  std::string delta_structure;
  std::string snapshot;
  std::string state;
  std::string out;
  std::string config;
  std::string inject_failures;
  int partitions = 4;
  int workers = 4;
  uint64_t seed = 0;
  double tol = 1e-9;
  int max_iters = 100;
  double filter_thresh = 0.0;
  bool cpc = false;
  double auto_off = 0.5;
  bool no_store = false;
  bool checkpoints = false;
  int checkpoint_interval = 1;

  // Which flags were given, so delta modes only override what the user set.
  CLI::App* cmd = nullptr;
  bool given(const char* name) const { return cmd->count(name) > 0; }
};

void apply_spec_flags(const RunOpts& o, imr::JobSpec* spec) {
  if (o.given("--workers")) spec->workers = o.workers;
  if (o.given("--seed")) spec->seed = o.seed;
  if (o.given("--tol")) spec->tol = o.tol;
  if (o.given("--max-iters")) spec->max_iters = o.max_iters;
  if (o.given("--filter-thresh")) spec->filter_thresh = o.filter_thresh;
  if (o.given("--cpc")) spec->cpc_enabled = o.cpc;
  if (o.given("--auto-off-threshold")) spec->auto_off_threshold = o.auto_off;
  if (o.given("--no-store")) spec->mrbg_enabled = !o.no_store;
  if (o.given("--checkpoints")) spec->checkpoints_enabled = o.checkpoints;
  if (o.given("--checkpoint-interval")) spec->checkpoint_interval = o.checkpoint_interval;
}

std::optional<imr::FailurePlan> load_failure_plan(const RunOpts& o) {
  if (o.inject_failures.empty()) return std::nullopt;
  if (o.mode != "iter" && o.mode != "incr-iter") {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "--inject-failures applies to iter and incr-iter modes");
  }
  return imr::FailurePlan::load(o.inject_failures);
}

json outcome_json(const imr::IterationOutcome& out, const std::string& run_id) {
  return {{"run_id", run_id},
          {"iterations", out.iterations},
          {"converged", out.converged},
          {"final_l1", out.final_l1},
          {"mrbg_disabled", out.mrbg_disabled},
          {"mrbg_disabled_at", out.mrbg_disabled_at},
          {"failures_recovered", out.failures_recovered}};
}

int run_plain(const RunOpts& o) {
  if (o.app.empty()) imr::throw_error(imr::ErrorCode::kConfig, "--mode plain needs --app");
  if (o.input.empty()) imr::throw_error(imr::ErrorCode::kConfig, "--mode plain needs --input");
  imr::JobSpec spec;
  spec.app = o.app;
  spec.mode = imr::JobMode::kPlain;
  spec.partitions = o.partitions;
  spec.workers = o.workers;
  spec.seed = o.seed;
  spec.mrbg_enabled = !o.no_store;
  spec.app_config = load_app_config(o.config, o.input);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.one_step) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is iterative; use --mode iter");
  }
  auto inputs = imr::list_run_files(o.input);
  if (inputs.empty()) imr::throw_error(imr::ErrorCode::kConfig, "no run files under " + o.input);

  auto wd = imr::Workdir::create(resolve_workdir(o.out, "--out"), spec.partitions);
  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);
  auto stats = imr::run_plain_job(spec, *bundle.one_step, inputs, wd, pool, metrics);

  imr::RunManifest m;
  m.run_id = imr::make_run_id(spec);
  m.spec = spec;
  m.input_runs = static_cast<int>(inputs.size());
  m.mrbg_valid = spec.mrbg_enabled;
  m.counters = metrics.counters_json();
  m.save(wd.manifest_path());

  print_json({{"run_id", m.run_id},
              {"output", wd.output_dir().string()},
              {"map_invocations", stats.map_invocations},
              {"reduce_invocations", stats.reduce_invocations},
              {"output_records", stats.output_records},
              {"shuffle_bytes", stats.shuffle_bytes}});
  return 0;
}

int run_incr(const RunOpts& o) {
  if (o.delta.empty()) imr::throw_error(imr::ErrorCode::kConfig, "--mode incr needs --delta");
  fs::path root = resolve_workdir(o.state, "--state");
  imr::Workdir wd(root);
  auto m = imr::RunManifest::load(wd.manifest_path());
  imr::JobSpec spec = m.spec;
  spec.mode = imr::JobMode::kIncr;
  apply_spec_flags(o, &spec);
  if (!o.config.empty()) spec.app_config = load_json_file(o.config);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.one_step) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is iterative; use --mode incr-iter");
  }
  if (!m.mrbg_valid && !bundle.one_step->accumulator) {
    imr::throw_error(imr::ErrorCode::kStateMismatch,
                     "base run kept no intermediate state and the app has no accumulator");
  }
  auto deltas = imr::list_run_files(o.delta);
  if (deltas.empty()) imr::throw_error(imr::ErrorCode::kConfig, "no run files under " + o.delta);

  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);
  auto stats = imr::run_incremental_job(spec, *bundle.one_step, deltas, wd, pool, metrics);

  m.previous_run_id = m.run_id;
  m.run_id = imr::make_run_id(spec);
  m.spec = spec;
  m.counters = metrics.counters_json();
  m.save(wd.manifest_path());

  print_json({{"run_id", m.run_id},
              {"previous_run_id", m.previous_run_id},
              {"delta_map_invocations", stats.delta_map_invocations},
              {"reduce_reexecuted_keys", stats.reduce_reexecuted_keys},
              {"reduce_invocations", stats.reduce_invocations},
              {"result_retractions", stats.result_retractions},
              {"accumulator_folds", stats.accumulator_folds},
              {"shuffle_bytes", stats.shuffle_bytes}});
  return 0;
}

int run_iter(const RunOpts& o) {
  if (o.app.empty()) imr::throw_error(imr::ErrorCode::kConfig, "--mode iter needs --app");
  if (o.structure.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "--mode iter needs --structure");
  }
  fs::path base = o.structure;
  fs::path structure_dir = fs::is_directory(base / "structure") ? base / "structure" : base;
  fs::path state_dir = base / "state";
  if (!fs::is_directory(state_dir)) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "expected structure/ and state/ under " + base.string());
  }

  imr::JobSpec spec;
  spec.app = o.app;
  spec.mode = imr::JobMode::kIter;
  spec.partitions = o.partitions;
  spec.workers = o.workers;
  spec.seed = o.seed;
  spec.tol = o.tol;
  spec.max_iters = o.max_iters;
  spec.mrbg_enabled = !o.no_store;
  spec.checkpoints_enabled = o.checkpoints;
  spec.checkpoint_interval = o.checkpoint_interval;
  spec.app_config = load_app_config(o.config, base);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.iterative) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is one-step; use --mode plain");
  }
  auto plan = load_failure_plan(o);

  auto wd = imr::Workdir::create(resolve_workdir(o.out, "--out"), spec.partitions);
  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);

  imr::RunManifest m;
  m.run_id = imr::make_run_id(spec);
  m.spec = spec;
  imr::partition_iterative_data(spec, *bundle.iterative,
                                imr::list_run_files(structure_dir),
                                imr::list_run_files(state_dir), wd, &m, metrics);
  auto outcome = imr::run_iterative_job(spec, *bundle.iterative, wd, pool, metrics,
                                        plan ? &*plan : nullptr);
  if (spec.mrbg_enabled) {
    imr::build_edge_graph(spec, *bundle.iterative, wd, pool, metrics);
    m.mrbg_valid = true;
  }
  m.iterations_run = outcome.iterations;
  m.converged = outcome.converged;
  m.counters = metrics.counters_json();
  m.save(wd.manifest_path());
  imr::save_snapshot(wd, m);
  metrics.write_iterations_csv(wd.iterations_csv());

  print_json(outcome_json(outcome, m.run_id));
  return 0;
}

int run_incr_iter(const RunOpts& o) {
  if (o.snapshot.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "--mode incr-iter needs --snapshot");
  }
  if (o.delta_structure.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "--mode incr-iter needs --delta-structure");
  }
  auto snap_manifest = imr::RunManifest::load(fs::path(o.snapshot) / "manifest.json");
  auto wd = imr::Workdir::create(resolve_workdir(o.out, "--out"),
                                 snap_manifest.spec.partitions);
  auto m = imr::load_snapshot(o.snapshot, wd);

  imr::JobSpec spec = m.spec;
  spec.mode = imr::JobMode::kIncrIter;
  apply_spec_flags(o, &spec);
  if (!o.config.empty()) spec.app_config = load_json_file(o.config);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.iterative) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is one-step; use --mode incr");
  }
  auto deltas = imr::list_run_files(o.delta_structure);
  if (deltas.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "no run files under " + o.delta_structure);
  }
  auto plan = load_failure_plan(o);

  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);
  auto outcome = imr::run_incr_iterative_job(spec, *bundle.iterative, deltas, wd, &m, pool,
                                             metrics, plan ? &*plan : nullptr);
  metrics.write_iterations_csv(wd.iterations_csv());

  print_json(outcome_json(outcome, m.run_id));
  return 0;
}

int cmd_run(const RunOpts& o) {
  if (o.mode == "plain") return run_plain(o);
  if (o.mode == "incr") return run_incr(o);
  if (o.mode == "iter") return run_iter(o);
  if (o.mode == "incr-iter") return run_incr_iter(o);
  imr::throw_error(imr::ErrorCode::kConfig,
                   "unknown mode '" + o.mode + "' (plain|incr|iter|incr-iter)");
}

// --- compare ----------------------------------------------------------------

struct CompareOpts {
  std::string a;
  std::string b;
  double tol = 0.0;
  int sample = 10;
};

int cmd_compare(const CompareOpts& o) {
  auto j = imr::compare_outputs(o.a, o.b, o.tol, o.sample);
  print_json(j);
  return j.at("pass").get<bool>() ? 0 : 1;
}

// --- compact ----------------------------------------------------------------

struct CompactOpts {
  std::string state;
  int partition = -1;
};

int cmd_compact(const CompactOpts& o) {
  imr::Workdir wd(resolve_workdir(o.state, "--state"));
  auto m = imr::RunManifest::load(wd.manifest_path());
  imr::StoreOptions options;
  options.gap_threshold_bytes = m.spec.gap_threshold_bytes;
  options.read_cache_bytes = m.spec.read_cache_bytes;
  options.append_buffer_bytes = m.spec.append_buffer_bytes;

  json rows = json::array();
  for (int p = 0; p < m.spec.partitions; p++) {
    if (o.partition >= 0 && p != o.partition) continue;
    if (!fs::exists(wd.partition_dir(p) / "mrbg.dat")) continue;
    imr::MrbgStore store(wd.partition_dir(p), options);
    uint64_t before = store.data_file_bytes();
    store.compact();
    rows.push_back({{"partition", p},
                    {"bytes_before", before},
                    {"bytes_after", store.data_file_bytes()},
                    {"keys", store.key_count()},
                    {"batches", store.batch_count()}});
  }
  print_json({{"compacted", rows}});
  return 0;
}

// --- checkpoint-ls ----------------------------------------------------------

int cmd_checkpoint_ls(const std::string& state) {
  imr::Workdir wd(resolve_workdir(state, "--state"));
  json rows = json::array();
  for (const auto& info : imr::list_checkpoints(wd)) {
    uint64_t bytes = 0;
    for (const auto& f : info.files) bytes += f.bytes;
    rows.push_back({{"iteration", info.iteration},
                    {"files", info.files.size()},
                    {"bytes", bytes},
                    {"valid", imr::verify_checkpoint(wd, info.iteration)}});
  }
  print_json({{"checkpoints", rows}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incremental MapReduce runtime"};
  app.require_subcommand(1);

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a seeded synthetic workload");
  gen_cmd->add_option("--app", gen.app, "application name")->required();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "rng seed");
  for (const char* knob : {"records", "input-runs", "vocab", "doc-len", "candidates",
                           "vertices", "degree", "weight-range", "points", "clusters",
                           "dims", "blocks", "block-size"}) {
    std::string param = knob;
    for (auto& c : param) {
      if (c == '-') c = '_';
    }
    gen_cmd->add_option_function<uint64_t>(
        "--" + std::string(knob),
        [&gen, param](uint64_t v) { gen.knobs[param] = v; });
  }
  gen_cmd->add_option("--d", gen.damping, "pagerank damping factor")
      ->each([&gen](const std::string&) { gen.damping_set = true; });
  gen_cmd->add_option("--init-rank", gen.init_rank, "pagerank starting rank per vertex")
      ->each([&gen](const std::string&) { gen.init_rank_set = true; });

  GenDeltaOpts gd;
  auto* gd_cmd = app.add_subcommand("gen-delta", "derive a signed delta from a base dataset");
  gd_cmd->add_option("--app", gd.app, "application name")->required();
  gd_cmd->add_option("--base", gd.base, "base dataset directory")->required();
  gd_cmd->add_option("--out", gd.out, "output directory")->required();
  gd_cmd->add_option("--fraction", gd.fraction, "fraction of base records to touch");
  gd_cmd->add_option("--ops", gd.ops, "mixed|update|delete|insert");
  gd_cmd->add_option("--seed", gd.seed, "rng seed");

  RunOpts run;
  auto* run_cmd = app.add_subcommand("run", "execute a job");
  run.cmd = run_cmd;
  run_cmd->add_option("--app", run.app, "application name");
  run_cmd->add_option("--mode", run.mode, "plain|incr|iter|incr-iter")->required();
  run_cmd->add_option("--input", run.input, "input directory (plain)");
  run_cmd->add_option("--structure", run.structure, "iterative dataset directory (iter)");
  run_cmd->add_option("--delta", run.delta, "delta directory (incr)");
  run_cmd->add_option("--delta-structure", run.delta_structure,
                      "structure delta directory (incr-iter)");
  run_cmd->add_option("--snapshot", run.snapshot, "converged snapshot directory (incr-iter)");
  run_cmd->add_option("--state", run.state, "existing workdir to refresh in place (incr)");
  run_cmd->add_option("--out", run.out, "workdir to create (defaults to $IMR_WORKDIR)");
  run_cmd->add_option("--partitions", run.partitions, "reduce partition count");
  run_cmd->add_option("--workers", run.workers, "worker thread count");
  run_cmd->add_option("--seed", run.seed, "job seed");
  run_cmd->add_option("--tol", run.tol, "L1 convergence threshold");
  run_cmd->add_option("--max-iters", run.max_iters, "iteration cap");
  run_cmd->add_option("--filter-thresh", run.filter_thresh, "change filter threshold");
  run_cmd->add_flag("--cpc", run.cpc, "accumulate filtered changes until they clear the threshold");
  run_cmd->add_option("--auto-off-threshold", run.auto_off,
                      "changed-state fraction that disables the edge store");
  run_cmd->add_flag("--no-store", run.no_store, "skip intermediate-state preservation");
  run_cmd->add_flag("--checkpoints", run.checkpoints, "write per-iteration checkpoints");
  run_cmd->add_option("--checkpoint-interval", run.checkpoint_interval, "iterations per checkpoint");
  run_cmd->add_option("--config", run.config, "app config JSON file");
  run_cmd->add_option("--inject-failures", run.inject_failures, "failure plan JSON file");

  CompareOpts cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "diff two run outputs");
  cmp_cmd->add_option("--a", cmp.a, "first run/output directory")->required();
  cmp_cmd->add_option("--b", cmp.b, "second run/output directory")->required();
  cmp_cmd->add_option("--tol", cmp.tol, "max relative error tolerated");
  cmp_cmd->add_option("--sample", cmp.sample, "mismatched keys listed per bucket");

  CompactOpts cpt;
  auto* cpt_cmd = app.add_subcommand("compact", "rewrite edge stores without dead bytes");
  cpt_cmd->add_option("--state", cpt.state, "workdir");
  cpt_cmd->add_option("--partition", cpt.partition, "single partition (default: all)");

  std::string ckls_state;
  auto* ckls_cmd = app.add_subcommand("checkpoint-ls", "list checkpoints in a workdir");
  ckls_cmd->add_option("--state", ckls_state, "workdir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (gd_cmd->parsed()) return cmd_gen_delta(gd);
    if (run_cmd->parsed()) return cmd_run(run);
    if (cmp_cmd->parsed()) return cmd_compare(cmp);
    if (cpt_cmd->parsed()) return cmd_compact(cpt);
    if (ckls_cmd->parsed()) return cmd_checkpoint_ls(ckls_state);
  } catch (const imr::ImrError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == imr::ErrorCode::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
