#include "imr/workdir.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

namespace imr {

namespace fs = std::filesystem;

Workdir Workdir::create(const fs::path& root, int partitions) {
  Workdir wd(root);
  fs::create_directories(root);
  for (int p = 0; p < partitions; p++) fs::create_directories(wd.partition_dir(p));
  fs::create_directories(wd.output_dir());
  fs::create_directories(wd.tmp_dir());
  return wd;
}

fs::path Workdir::partition_dir(int p) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", p);
  return root_ / "partitions" / buf;
}

fs::path Workdir::output_run(int p) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "part-%05d.run", p);
  return output_dir() / buf;
}

void Workdir::clear_tmp() const {
  fs::remove_all(tmp_dir());
  fs::create_directories(tmp_dir());
}

void RunManifest::save(const fs::path& path) const {
  nlohmann::json j = {
      {"format_version", 1},
      {"run_id", run_id},
      {"previous_run_id", previous_run_id},
      {"spec", spec.to_json()},
      {"input_runs", input_runs},
      {"next_seq", next_seq},
      {"insert_seq", insert_seq},
      {"mrbg_valid", mrbg_valid},
      {"iterations_run", iterations_run},
      {"converged", converged},
      {"counters", counters},
  };
  // Write-then-rename so a crash never leaves a half-written manifest.
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw_error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorCode::kNotFound, "manifest missing: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorCode::kCorruptFrame, "bad manifest " + path.string() + ": " + e.what());
  }
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.previous_run_id = j.value("previous_run_id", "");
  m.spec = JobSpec::from_json(j.at("spec"));
  m.input_runs = j.at("input_runs").get<int>();
  m.next_seq = j.at("next_seq").get<std::vector<uint64_t>>();
  m.insert_seq = j.value("insert_seq", std::vector<uint64_t>{});
  m.mrbg_valid = j.at("mrbg_valid").get<bool>();
  m.iterations_run = j.value("iterations_run", 0);
  m.converged = j.value("converged", false);
  m.counters = j.value("counters", nlohmann::json::object());
  return m;
}

std::string make_run_id(const JobSpec& spec) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  uint64_t ns = std::chrono::duration_cast<std::chrono::nanoseconds>(now).count();
  std::string ident = spec.app + "|" + job_mode_name(spec.mode) + "|" +
                      std::to_string(spec.seed) + "|" + std::to_string(ns);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(ident)));
  return buf;
}

}  // namespace imr
