#include "imr/apps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>

namespace imr {

// --- value format helpers ---------------------------------------------------

std::vector<std::string> split_tokens(const std::string& text, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find(sep, start);
    if (end == std::string::npos) end = text.size();
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::vector<std::pair<std::string, double>> parse_weighted_adjacency(const std::string& s) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& item : split_tokens(s, ';')) {
    size_t colon = item.rfind(':');
    if (colon == std::string::npos) {
      throw_error(ErrorCode::kContractViolation, "bad adjacency item '" + item + "'");
    }
    out.emplace_back(item.substr(0, colon), parse_double(item.substr(colon + 1)));
  }
  return out;
}

std::string format_weighted_adjacency(const std::vector<std::pair<std::string, double>>& adj) {
  std::string out;
  for (const auto& [target, w] : adj) {
    out += target;
    out += ':';
    out += format_double(w);
    out += ';';
  }
  return out;
}

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_tokens(s, ',')) out.push_back(parse_double(item));
  return out;
}

std::string format_vector(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); i++) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double>>> parse_centroids(const std::string& s) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& item : split_tokens(s, '|')) {
    size_t colon = item.find(':');
    if (colon == std::string::npos) {
      throw_error(ErrorCode::kContractViolation, "bad centroid item '" + item + "'");
    }
    out.emplace_back(item.substr(0, colon), parse_vector(item.substr(colon + 1)));
  }
  return out;
}

std::string format_centroids(const std::vector<std::pair<std::string, std::vector<double>>>& cs) {
  std::string out;
  for (const auto& [id, pos] : cs) {
    out += id;
    out += ':';
    out += format_vector(pos);
    out += '|';
  }
  return out;
}

namespace {

// --- one-step apps ----------------------------------------------------------

int64_t parse_count(const std::string& s) { return std::atoll(s.c_str()); }

OneStepApp wordcount_app(bool with_accumulator) {
  OneStepApp app;
  app.map = [](const KvRecord& rec, const MapEmit& emit) {
    std::map<std::string, int64_t> counts;
    for (const auto& w : split_tokens(rec.value)) counts[w]++;
    for (const auto& [w, c] : counts) emit(w, std::to_string(c));
  };
  app.reduce = [](const std::string& k2, const std::vector<std::string>& values,
                  const ReduceEmit& emit) {
    int64_t total = 0;
    for (const auto& v : values) total += parse_count(v);
    emit(k2, std::to_string(total));
  };
  if (with_accumulator) {
    app.accumulator = AccumulatorFn{
        "0", [](const std::string& a, const std::string& b) {
          return std::to_string(parse_count(a) + parse_count(b));
        }};
  }
  return app;
}

OneStepApp paircount_app(const nlohmann::json& config) {
  auto candidates = std::make_shared<std::set<std::string>>();
  if (config.contains("candidates")) {
    for (const auto& c : config.at("candidates")) candidates->insert(c.get<std::string>());
  }
  OneStepApp app;
  app.map = [candidates](const KvRecord& rec, const MapEmit& emit) {
    auto tokens = split_tokens(rec.value);
    std::map<std::string, int64_t> counts;
    for (size_t i = 0; i + 1 < tokens.size(); i++) {
      std::string pair = tokens[i] + " " + tokens[i + 1];
      if (candidates->empty() || candidates->count(pair)) counts[pair]++;
    }
    for (const auto& [pair, c] : counts) emit(pair, std::to_string(c));
  };
  app.reduce = [](const std::string& k2, const std::vector<std::string>& values,
                  const ReduceEmit& emit) {
    int64_t total = 0;
    for (const auto& v : values) total += parse_count(v);
    emit(k2, std::to_string(total));
  };
  app.accumulator = AccumulatorFn{
      "0", [](const std::string& a, const std::string& b) {
        return std::to_string(parse_count(a) + parse_count(b));
      }};
  return app;
}

OneStepApp edgesum_app() {
  OneStepApp app;
  app.map = [](const KvRecord& rec, const MapEmit& emit) {
    // Duplicate targets within one adjacency list fold locally so each
    // invocation contributes at most one edge per target.
    std::map<std::string, double> local;
    for (const auto& [target, w] : parse_weighted_adjacency(rec.value)) local[target] += w;
    for (const auto& [target, w] : local) emit(target, format_double(w));
  };
  app.reduce = [](const std::string& k2, const std::vector<std::string>& values,
                  const ReduceEmit& emit) {
    double total = 0;
    for (const auto& v : values) total += parse_double(v);
    emit(k2, format_double(total));
  };
  return app;
}

// --- pagerank ---------------------------------------------------------------

// Shared arithmetic so the iterative engine and the chained-plain oracle
// produce bitwise-identical sums.
void pagerank_emissions(const std::string& sk, const std::string& sv, double r,
                        const MapEmit& emit) {
  auto neighbors = split_tokens(sv);
  if (neighbors.empty()) {
    emit(sk, "0");
    return;
  }
  double share = r / static_cast<double>(neighbors.size());
  bool self = false;
  for (const auto& n : neighbors) {
    if (n == sk) self = true;
    emit(n, format_double(share));
  }
  if (!self) emit(sk, "0");
}

std::string pagerank_fold(double d, double base, const std::vector<std::string>& values) {
  double sum = 0;
  for (const auto& v : values) sum += parse_double(v);
  return format_double(d * sum + (1.0 - d) * base);
}

IterativeApp pagerank_app(const nlohmann::json& config) {
  double d = config.value("d", 0.85);
  // Per-vertex teleport mass. Scaling it scales the whole fixed point, which
  // sets how coarse an absolute change-filter threshold is in relative terms.
  double base = config.value("base", 1.0);
  IterativeApp app;
  app.project_kind = ProjectKind::kOne2One;
  app.project = [](const std::string& sk) { return sk; };
  app.init = [d, base](const std::string&) { return format_double((1.0 - d) * base); };
  app.map = [](const std::string& sk, const std::string& sv, const std::string&,
               const std::string& dv, const MapEmit& emit) {
    pagerank_emissions(sk, sv, parse_double(dv), emit);
  };
  app.reduce = [d, base](const std::string&, const std::string&,
                         const std::vector<std::string>& values) {
    return pagerank_fold(d, base, values);
  };
  app.difference = [](const std::string& a, const std::string& b) {
    return std::fabs(parse_double(a) - parse_double(b));
  };
  return app;
}

// --- sssp -------------------------------------------------------------------

IterativeApp sssp_app(const nlohmann::json& config) {
  std::string source = config.value("source", "0");
  IterativeApp app;
  app.project_kind = ProjectKind::kOne2One;
  app.project = [](const std::string& sk) { return sk; };
  app.init = [source](const std::string& dk) { return dk == source ? "0" : "inf"; };
  app.map = [](const std::string& sk, const std::string& sv, const std::string&,
               const std::string& dv, const MapEmit& emit) {
    double dist = parse_double(dv);
    std::map<std::string, double> local;
    for (const auto& [target, w] : parse_weighted_adjacency(sv)) {
      double cand = dist + w;
      auto [it, fresh] = local.emplace(target, cand);
      if (!fresh && cand < it->second) it->second = cand;
    }
    bool self = local.count(sk) > 0;
    for (const auto& [target, cand] : local) emit(target, format_double(cand));
    if (!self) emit(sk, "inf");
  };
  app.reduce = [source](const std::string& dk, const std::string&,
                        const std::vector<std::string>& values) {
    if (dk == source) return std::string("0");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : values) best = std::min(best, parse_double(v));
    return format_double(best);
  };
  app.difference = [](const std::string& a, const std::string& b) {
    double x = parse_double(a);
    double y = parse_double(b);
    if (std::isinf(x) && std::isinf(y)) return 0.0;
    return std::fabs(x - y);
  };
  return app;
}

// --- kmeans -----------------------------------------------------------------

IterativeApp kmeans_app(const nlohmann::json& config) {
  (void)config;
  IterativeApp app;
  app.project_kind = ProjectKind::kAll2One;
  app.replicated_state = true;
  app.project = [](const std::string&) { return std::string("centroids"); };
  app.init = [](const std::string&) { return std::string(); };
  app.map = [](const std::string&, const std::string& sv, const std::string&,
               const std::string& dv, const MapEmit& emit) {
    auto point = parse_vector(sv);
    auto centroids = parse_centroids(dv);
    if (centroids.empty()) {
      throw_error(ErrorCode::kContractViolation, "kmeans state holds no centroids");
    }
    const std::string* best = nullptr;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (const auto& [id, pos] : centroids) {
      double d2 = 0;
      for (size_t i = 0; i < pos.size() && i < point.size(); i++) {
        double diff = point[i] - pos[i];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = &id;
      }
    }
    emit(*best, sv);
  };
  // Complete per-cluster mean: the engine homes each cluster's edges in one
  // chunk, so values covers every member point.
  app.reduce = [](const std::string&, const std::string&,
                  const std::vector<std::string>& values) {
    std::vector<double> sum;
    for (const auto& v : values) {
      auto p = parse_vector(v);
      if (sum.empty()) sum.assign(p.size(), 0.0);
      for (size_t i = 0; i < p.size() && i < sum.size(); i++) sum[i] += p[i];
    }
    for (auto& x : sum) x /= static_cast<double>(values.size());
    return format_vector(sum);
  };
  // Empty clusters keep their prior centroid.
  app.assemble = [](const std::string& prior, const std::vector<KvRecord>& outputs) {
    auto centroids = parse_centroids(prior);
    for (auto& [id, pos] : centroids) {
      for (const auto& out : outputs) {
        if (out.key == id) pos = parse_vector(out.value);
      }
    }
    return format_centroids(centroids);
  };
  app.difference = [](const std::string& a, const std::string& b) {
    auto ca = parse_centroids(a);
    auto cb = parse_centroids(b);
    double total = 0;
    for (size_t i = 0; i < ca.size() && i < cb.size(); i++) {
      double d2 = 0;
      for (size_t k = 0; k < ca[i].second.size() && k < cb[i].second.size(); k++) {
        double diff = ca[i].second[k] - cb[i].second[k];
        d2 += diff * diff;
      }
      total += std::sqrt(d2);
    }
    return total;
  };
  return app;
}

// --- gimv -------------------------------------------------------------------

// Block matrix-vector multiply: structure key "i,j" holds block A_ij (rows
// ';'-separated), state key "j" holds vector block x_j; one iteration
// computes y_i = Σ_j A_ij · x_j.
IterativeApp gimv_app(const nlohmann::json& config) {
  int block_size = config.value("block_size", 2);
  IterativeApp app;
  app.project_kind = ProjectKind::kMany2One;
  app.project = [](const std::string& sk) {
    size_t comma = sk.find(',');
    if (comma == std::string::npos) {
      throw_error(ErrorCode::kContractViolation, "gimv structure key must be 'i,j': " + sk);
    }
    return sk.substr(comma + 1);
  };
  app.init = [block_size](const std::string&) {
    return format_vector(std::vector<double>(block_size, 0.0));
  };
  app.map = [](const std::string& sk, const std::string& sv, const std::string&,
               const std::string& dv, const MapEmit& emit) {
    size_t comma = sk.find(',');
    std::string row_key = sk.substr(0, comma);
    auto x = parse_vector(dv);
    std::vector<double> y;
    for (const auto& row : split_tokens(sv, ';')) {
      auto coeffs = parse_vector(row);
      double acc = 0;
      for (size_t i = 0; i < coeffs.size() && i < x.size(); i++) acc += coeffs[i] * x[i];
      y.push_back(acc);
    }
    emit(row_key, format_vector(y));
  };
  app.reduce = [block_size](const std::string&, const std::string&,
                            const std::vector<std::string>& values) {
    std::vector<double> sum(block_size, 0.0);
    for (const auto& v : values) {
      auto p = parse_vector(v);
      for (size_t i = 0; i < p.size() && i < sum.size(); i++) sum[i] += p[i];
    }
    return format_vector(sum);
  };
  app.difference = [](const std::string& a, const std::string& b) {
    auto va = parse_vector(a);
    auto vb = parse_vector(b);
    double total = 0;
    for (size_t i = 0; i < va.size() && i < vb.size(); i++) total += std::fabs(va[i] - vb[i]);
    return total;
  };
  return app;
}

}  // namespace

OneStepApp make_pagerank_sweep(std::shared_ptr<const std::map<std::string, std::string>> state,
                               double d, double base) {
  OneStepApp app;
  app.map = [state, d, base](const KvRecord& rec, const MapEmit& emit) {
    auto it = state->find(rec.key);
    double r = it != state->end() ? parse_double(it->second) : (1.0 - d) * base;
    pagerank_emissions(rec.key, rec.value, r, emit);
  };
  app.reduce = [d, base](const std::string& k2, const std::vector<std::string>& values,
                         const ReduceEmit& emit) { emit(k2, pagerank_fold(d, base, values)); };
  return app;
}

AppBundle make_app(const std::string& name, const nlohmann::json& raw_config) {
  nlohmann::json config = raw_config.is_object() ? raw_config : nlohmann::json::object();
  AppBundle bundle;
  bundle.name = name;
  if (name == "wordcount") {
    bundle.one_step = wordcount_app(false);
  } else if (name == "wordcount-acc") {
    bundle.one_step = wordcount_app(true);
  } else if (name == "paircount") {
    bundle.one_step = paircount_app(config);
  } else if (name == "edgesum") {
    bundle.one_step = edgesum_app();
  } else if (name == "pagerank") {
    bundle.iterative = pagerank_app(config);
  } else if (name == "sssp") {
    bundle.iterative = sssp_app(config);
  } else if (name == "kmeans") {
    bundle.iterative = kmeans_app(config);
  } else if (name == "gimv") {
    bundle.iterative = gimv_app(config);
  } else {
    throw_error(ErrorCode::kConfig, "unknown app '" + name + "'");
  }
  return bundle;
}

std::vector<std::string> app_names() {
  return {"wordcount", "wordcount-acc", "paircount", "edgesum",
          "pagerank",  "sssp",          "kmeans",    "gimv"};
}

}  // namespace imr
