#include "imr/metrics.hpp"

#include <chrono>
#include <fstream>

#include "imr/common.hpp"

namespace imr {

double now_ms() {
  auto t = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double, std::milli>(t).count();
}

Metrics::Metrics(const std::filesystem::path& jsonl_path) { attach(jsonl_path); }

void Metrics::attach(const std::filesystem::path& jsonl_path) {
  std::lock_guard<std::mutex> lock(mu_);
  jsonl_path_ = jsonl_path;
}

void Metrics::add(const std::string& counter, uint64_t delta) {
  std::lock_guard<std::mutex> lock(mu_);
  counters_[counter] += delta;
}

uint64_t Metrics::counter(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = counters_.find(name);
  return it == counters_.end() ? 0 : it->second;
}

void Metrics::event(const std::string& name, nlohmann::json fields) {
  std::lock_guard<std::mutex> lock(mu_);
  if (jsonl_path_.empty()) return;
  fields["event"] = name;
  std::ofstream out(jsonl_path_, std::ios::app);
  if (!out) {
    throw_error(ErrorCode::kIo, "cannot append metrics to " + jsonl_path_.string());
  }
  out << fields.dump() << "\n";
}

void Metrics::iteration(const IterationRow& row) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    iterations_.push_back(row);
  }
  event("iteration", {{"iteration", row.iteration},
                      {"l1_delta", row.l1_delta},
                      {"wall_ms", row.wall_ms},
                      {"shuffle_bytes", row.shuffle_bytes},
                      {"propagated_kv", row.propagated_kv},
                      {"p_delta", row.p_delta},
                      {"mrbg_enabled", row.mrbg_enabled},
                      {"reduce_reexecuted", row.reduce_reexecuted}});
}

void Metrics::write_iterations_csv(const std::filesystem::path& path) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(path);
  if (!out) {
    throw_error(ErrorCode::kIo, "cannot write csv to " + path.string());
  }
  out << "iteration,l1_delta,wall_ms,shuffle_bytes,propagated_kv,p_delta,"
         "mrbg_enabled,reduce_reexecuted\n";
  char buf[64];
  for (const auto& r : iterations_) {
    std::snprintf(buf, sizeof buf, "%.17g", r.l1_delta);
    out << r.iteration << "," << buf << ",";
    std::snprintf(buf, sizeof buf, "%.3f", r.wall_ms);
    out << buf << "," << r.shuffle_bytes << "," << r.propagated_kv << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.p_delta);
    out << buf << "," << (r.mrbg_enabled ? 1 : 0) << "," << r.reduce_reexecuted << "\n";
  }
}

nlohmann::json Metrics::counters_json() const {
  std::lock_guard<std::mutex> lock(mu_);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : counters_) j[k] = v;
  return j;
}

}  // namespace imr
