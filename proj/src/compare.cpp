#include "imr/compare.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "imr/apps.hpp"
#include "imr/run_file.hpp"
#include "imr/workdir.hpp"

namespace imr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve_output_dir(const fs::path& dir) {
  if (fs::is_directory(dir / "output")) return dir / "output";
  return dir;
}

std::map<std::string, std::vector<std::string>> read_outputs(const fs::path& dir) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& run : list_run_files(resolve_output_dir(dir))) {
    for (auto& rec : read_kv_run(run)) {
      out[rec.key].push_back(std::move(rec.value));
    }
  }
  return out;
}

std::string run_id_of(const fs::path& dir) {
  fs::path mp = dir / "manifest.json";
  if (!fs::exists(mp)) return "";
  return RunManifest::load(mp).run_id;
}

// 0 when equal (including matching infinities); symmetric otherwise.
double rel_err(double x, double y) {
  if (x == y) return 0.0;
  if (std::isnan(x) || std::isnan(y)) return std::numeric_limits<double>::infinity();
  double denom = std::max({std::fabs(x), std::fabs(y), 1e-300});
  return std::fabs(x - y) / denom;
}

}  // namespace

json compare_outputs(const fs::path& a_dir, const fs::path& b_dir, double tol, int sample) {
  auto a = read_outputs(a_dir);
  auto b = read_outputs(b_dir);

  uint64_t exact = 0, compared = 0, structural = 0;
  double max_err = 0.0, err_sum = 0.0;
  uint64_t err_count = 0;
  std::vector<std::string> missing, extra, mismatched;

  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      missing.push_back(ia->first);
      ++ia;
      continue;
    }
    if (ia == a.end() || ib->first < ia->first) {
      extra.push_back(ib->first);
      ++ib;
      continue;
    }
    compared++;
    const auto& va = ia->second;
    const auto& vb = ib->second;
    if (va == vb) {
      exact++;
    } else if (va.size() != vb.size()) {
      structural++;
      mismatched.push_back(ia->first);
    } else {
      bool numeric_ok = true;
      double key_err = 0.0;
      try {
        for (size_t i = 0; i < va.size(); i++) {
          auto xa = parse_vector(va[i]);
          auto xb = parse_vector(vb[i]);
          if (xa.size() != xb.size()) {
            numeric_ok = false;
            break;
          }
          for (size_t k = 0; k < xa.size(); k++) {
            double e = rel_err(xa[k], xb[k]);
            key_err = std::max(key_err, e);
            err_sum += e;
            err_count++;
          }
        }
      } catch (const ImrError&) {
        numeric_ok = false;  // non-numeric payloads must match byte for byte
      }
      if (!numeric_ok) {
        structural++;
        mismatched.push_back(ia->first);
      } else {
        max_err = std::max(max_err, key_err);
      }
    }
    ++ia;
    ++ib;
  }

  auto clip = [&](std::vector<std::string>& v) {
    if (static_cast<int>(v.size()) > sample) v.resize(sample);
    return v;
  };
  bool pass = missing.empty() && extra.empty() && structural == 0 && max_err <= tol;
  std::string verdict = pass ? "pass"
                        : (structural || !missing.empty() || !extra.empty())
                            ? "structural-mismatch"
                            : "value-mismatch";
  return {{"a", {{"path", a_dir.string()}, {"run_id", run_id_of(a_dir)}}},
          {"b", {{"path", b_dir.string()}, {"run_id", run_id_of(b_dir)}}},
          {"keys_a", a.size()},
          {"keys_b", b.size()},
          {"compared", compared},
          {"exact_matches", exact},
          {"max_rel_err", max_err},
          {"mean_rel_err", err_count ? err_sum / static_cast<double>(err_count) : 0.0},
          {"missing_keys", missing.size()},
          {"extra_keys", extra.size()},
          {"structural_mismatches", structural},
          {"missing_sample", clip(missing)},
          {"extra_sample", clip(extra)},
          {"mismatch_sample", clip(mismatched)},
          {"tolerance", tol},
          {"pass", pass},
          {"verdict", verdict}};
}

}  // namespace imr
