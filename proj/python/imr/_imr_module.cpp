// Python bindings. Each run_* function mirrors the matching CLI subcommand
// flow — same workdir layout, manifest handling and summary fields — so a
// workdir is interchangeable between the two front ends.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <optional>

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
#include "imr/run_file.hpp"
#include "imr/workdir.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json to_json(const py::handle& obj) {
  if (obj.is_none()) return json::object();
  auto dumps = py::module_::import("json").attr("dumps");
  return json::parse(dumps(obj).cast<std::string>());
}

py::object to_py(const json& j) {
  auto loads = py::module_::import("json").attr("loads");
  return loads(j.dump());
}

// A generated dataset's app_config.json rides along unless the caller
// passes an explicit config, matching the CLI.
json effective_config(const py::handle& config, const fs::path& data_dir) {
  if (!config.is_none()) return to_json(config);
  fs::path candidate = data_dir / "app_config.json";
  if (!data_dir.empty() && fs::exists(candidate)) {
    std::ifstream in(candidate);
    json j;
    in >> j;
    return j;
  }
  return json::object();
}

std::optional<imr::FailurePlan> failure_plan(const py::handle& inject) {
  if (inject.is_none()) return std::nullopt;
  return imr::FailurePlan::load(inject.cast<std::string>());
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

py::object py_generate_input(const std::string& app, const fs::path& out,
                             const py::object& params, uint64_t seed) {
  auto summary = imr::generate_input(app, to_json(params), seed, out);
  return to_py(summary.to_json());
}

py::object py_generate_delta(const std::string& app, const fs::path& base, const fs::path& out,
                             double fraction, const std::string& ops, uint64_t seed) {
  auto summary = imr::generate_delta(app, base, fraction, ops, seed, out);
  return to_py(summary.to_json());
}

py::object py_run_plain(const std::string& app, const fs::path& input, const fs::path& out,
                        int partitions, int workers, bool mrbg_enabled,
                        const py::object& config) {
  imr::JobSpec spec;
  spec.app = app;
  spec.mode = imr::JobMode::kPlain;
  spec.partitions = partitions;
  spec.workers = workers;
  spec.mrbg_enabled = mrbg_enabled;
  spec.app_config = effective_config(config, input);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.one_step) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is iterative; use run_iterative");
  }
  auto inputs = imr::list_run_files(input);
  if (inputs.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "no run files under " + input.string());
  }

  auto wd = imr::Workdir::create(out, spec.partitions);
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

  return to_py({{"run_id", m.run_id},
                {"output", wd.output_dir().string()},
                {"map_invocations", stats.map_invocations},
                {"reduce_invocations", stats.reduce_invocations},
                {"output_records", stats.output_records},
                {"shuffle_bytes", stats.shuffle_bytes}});
}

py::object py_run_incremental(const fs::path& workdir, const fs::path& delta,
                              std::optional<int> workers, const py::object& config) {
  imr::Workdir wd(workdir);
  auto m = imr::RunManifest::load(wd.manifest_path());
  imr::JobSpec spec = m.spec;
  spec.mode = imr::JobMode::kIncr;
  if (workers) spec.workers = *workers;
  if (!config.is_none()) spec.app_config = to_json(config);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.one_step) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is iterative; use run_incr_iterative");
  }
  if (!m.mrbg_valid && !bundle.one_step->accumulator) {
    imr::throw_error(imr::ErrorCode::kStateMismatch,
                     "base run kept no intermediate state and the app has no accumulator");
  }
  auto deltas = imr::list_run_files(delta);
  if (deltas.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "no run files under " + delta.string());
  }

  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);
  auto stats = imr::run_incremental_job(spec, *bundle.one_step, deltas, wd, pool, metrics);

  m.previous_run_id = m.run_id;
  m.run_id = imr::make_run_id(spec);
  m.spec = spec;
  m.counters = metrics.counters_json();
  m.save(wd.manifest_path());

  return to_py({{"run_id", m.run_id},
                {"previous_run_id", m.previous_run_id},
                {"delta_map_invocations", stats.delta_map_invocations},
                {"reduce_reexecuted_keys", stats.reduce_reexecuted_keys},
                {"reduce_invocations", stats.reduce_invocations},
                {"result_retractions", stats.result_retractions},
                {"accumulator_folds", stats.accumulator_folds},
                {"shuffle_bytes", stats.shuffle_bytes}});
}

py::object py_run_iterative(const std::string& app, const fs::path& data, const fs::path& out,
                            int partitions, int workers, double tol, int max_iters,
                            bool mrbg_enabled, bool checkpoints, int checkpoint_interval,
                            const py::object& inject_failures, const py::object& config) {
  fs::path structure_dir = fs::is_directory(data / "structure") ? data / "structure" : data;
  fs::path state_dir = data / "state";
  if (!fs::is_directory(state_dir)) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "expected structure/ and state/ under " + data.string());
  }

  imr::JobSpec spec;
  spec.app = app;
  spec.mode = imr::JobMode::kIter;
  spec.partitions = partitions;
  spec.workers = workers;
  spec.tol = tol;
  spec.max_iters = max_iters;
  spec.mrbg_enabled = mrbg_enabled;
  spec.checkpoints_enabled = checkpoints;
  spec.checkpoint_interval = checkpoint_interval;
  spec.app_config = effective_config(config, data);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.iterative) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is one-step; use run_plain");
  }
  auto plan = failure_plan(inject_failures);

  auto wd = imr::Workdir::create(out, spec.partitions);
  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);

  imr::RunManifest m;
  m.run_id = imr::make_run_id(spec);
  m.spec = spec;
  imr::partition_iterative_data(spec, *bundle.iterative, imr::list_run_files(structure_dir),
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

  return to_py(outcome_json(outcome, m.run_id));
}

py::object py_run_incr_iterative(const fs::path& snapshot, const fs::path& delta,
                                 const fs::path& out, std::optional<int> workers,
                                 std::optional<double> tol, std::optional<int> max_iters,
                                 std::optional<double> filter_thresh, std::optional<bool> cpc,
                                 std::optional<double> auto_off_threshold,
                                 std::optional<bool> checkpoints,
                                 std::optional<int> checkpoint_interval,
                                 const py::object& inject_failures, const py::object& config) {
  auto snap_manifest = imr::RunManifest::load(snapshot / "manifest.json");
  auto wd = imr::Workdir::create(out, snap_manifest.spec.partitions);
  auto m = imr::load_snapshot(snapshot, wd);

  imr::JobSpec spec = m.spec;
  spec.mode = imr::JobMode::kIncrIter;
  if (workers) spec.workers = *workers;
  if (tol) spec.tol = *tol;
  if (max_iters) spec.max_iters = *max_iters;
  if (filter_thresh) spec.filter_thresh = *filter_thresh;
  if (cpc) spec.cpc_enabled = *cpc;
  if (auto_off_threshold) spec.auto_off_threshold = *auto_off_threshold;
  if (checkpoints) spec.checkpoints_enabled = *checkpoints;
  if (checkpoint_interval) spec.checkpoint_interval = *checkpoint_interval;
  if (!config.is_none()) spec.app_config = to_json(config);

  auto bundle = imr::make_app(spec.app, spec.app_config);
  if (!bundle.iterative) {
    imr::throw_error(imr::ErrorCode::kConfig,
                     "app '" + spec.app + "' is one-step; use run_incremental");
  }
  auto deltas = imr::list_run_files(delta);
  if (deltas.empty()) {
    imr::throw_error(imr::ErrorCode::kConfig, "no run files under " + delta.string());
  }
  auto plan = failure_plan(inject_failures);

  imr::Metrics metrics(wd.metrics_path());
  imr::WorkerPool pool(spec.workers);
  auto outcome = imr::run_incr_iterative_job(spec, *bundle.iterative, deltas, wd, &m, pool,
                                             metrics, plan ? &*plan : nullptr);
  metrics.write_iterations_csv(wd.iterations_csv());

  return to_py(outcome_json(outcome, m.run_id));
}

std::map<std::string, std::string> py_read_output(const fs::path& dir) {
  fs::path resolved = fs::is_directory(dir / "output") ? dir / "output" : dir;
  std::map<std::string, std::string> out;
  for (const auto& run : imr::list_run_files(resolved)) {
    for (auto& rec : imr::read_kv_run(run)) out[rec.key] = std::move(rec.value);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> py_read_run(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& rec : imr::read_kv_run(path)) {
    out.emplace_back(std::move(rec.key), std::move(rec.value));
  }
  return out;
}

std::vector<std::tuple<std::string, std::string, bool>> py_read_delta_run(const fs::path& path) {
  std::vector<std::tuple<std::string, std::string, bool>> out;
  for (auto& rec : imr::read_delta_run(path)) {
    out.emplace_back(std::move(rec.key), std::move(rec.value),
                     rec.sign == imr::DeltaSign::kDelete);
  }
  return out;
}

void py_write_run(const fs::path& path, std::vector<std::pair<std::string, std::string>> records) {
  std::vector<imr::KvRecord> recs;
  recs.reserve(records.size());
  for (auto& [k, v] : records) recs.push_back({std::move(k), std::move(v)});
  std::sort(recs.begin(), recs.end(),
            [](const imr::KvRecord& a, const imr::KvRecord& b) { return a.key < b.key; });
  imr::write_kv_run(path, recs);
}

py::object py_compare(const fs::path& a, const fs::path& b, double tol, int sample) {
  return to_py(imr::compare_outputs(a, b, tol, sample));
}

}  // namespace

PYBIND11_MODULE(_imr, m) {
  m.doc() = "incremental MapReduce runtime";

  py::register_exception<imr::ImrError>(m, "Error");

  m.def("app_names", &imr::app_names, "Registered application names.");

  m.def("generate_input", &py_generate_input, py::arg("app"), py::arg("out"),
        py::arg("params") = py::none(), py::arg("seed") = 1,
        "Write a seeded synthetic workload; returns the generation summary.");

  m.def("generate_delta", &py_generate_delta, py::arg("app"), py::arg("base"), py::arg("out"),
        py::arg("fraction") = 0.1, py::arg("ops") = "mixed", py::arg("seed") = 1,
        "Derive a signed delta from a base dataset; returns the delta summary.");

  m.def("run_plain", &py_run_plain, py::arg("app"), py::arg("input"), py::arg("out"),
        py::arg("partitions") = 4, py::arg("workers") = 4, py::arg("mrbg_enabled") = true,
        py::arg("config") = py::none(),
        "One-step job from scratch; returns run statistics.");

  m.def("run_incremental", &py_run_incremental, py::arg("workdir"), py::arg("delta"),
        py::arg("workers") = py::none(), py::arg("config") = py::none(),
        "Refresh a one-step workdir in place from a delta; returns refresh statistics.");

  m.def("run_iterative", &py_run_iterative, py::arg("app"), py::arg("data"), py::arg("out"),
        py::arg("partitions") = 4, py::arg("workers") = 4, py::arg("tol") = 1e-9,
        py::arg("max_iters") = 100, py::arg("mrbg_enabled") = true,
        py::arg("checkpoints") = false, py::arg("checkpoint_interval") = 1,
        py::arg("inject_failures") = py::none(), py::arg("config") = py::none(),
        "Iterative job to convergence over a structure/ + state/ dataset; "
        "returns the outcome.");

  m.def("run_incr_iterative", &py_run_incr_iterative, py::arg("snapshot"), py::arg("delta"),
        py::arg("out"), py::arg("workers") = py::none(), py::arg("tol") = py::none(),
        py::arg("max_iters") = py::none(), py::arg("filter_thresh") = py::none(),
        py::arg("cpc") = py::none(), py::arg("auto_off_threshold") = py::none(),
        py::arg("checkpoints") = py::none(), py::arg("checkpoint_interval") = py::none(),
        py::arg("inject_failures") = py::none(), py::arg("config") = py::none(),
        "Refresh an iterative result from a snapshot and a structure delta; "
        "unset options inherit the snapshot's spec. Returns the outcome.");

  m.def("read_output", &py_read_output, py::arg("path"),
        "Merged key/value output of a run (workdir or bare output directory).");

  m.def("read_run", &py_read_run, py::arg("path"),
        "Records of one sorted run file as (key, value) pairs.");

  m.def("read_delta_run", &py_read_delta_run, py::arg("path"),
        "Records of one delta run file as (key, value, is_delete) tuples.");

  m.def("write_run", &py_write_run, py::arg("path"), py::arg("records"),
        "Write (key, value) pairs as a sorted run file.");

  m.def("compare", &py_compare, py::arg("a"), py::arg("b"), py::arg("tol") = 0.0,
        py::arg("sample") = 10,
        "Structural/numeric diff of two run outputs; see the 'pass' field.");
}
