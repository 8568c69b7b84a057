#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "imr/engine.hpp"
#include "imr/iterative.hpp"

namespace imr {

// A named application: one-step jobs carry map/reduce (plus an optional
// accumulator), iterative jobs carry the structure/state callback bundle.
struct AppBundle {
  std::string name;
  std::optional<OneStepApp> one_step;
  std::optional<IterativeApp> iterative;
};

// Builds one of: wordcount, wordcount-acc, paircount, edgesum, pagerank,
// sssp, kmeans, gimv. config supplies app parameters (pagerank "d", sssp
// "source", kmeans "k"/"dims", gimv "block_size", paircount "candidates").
AppBundle make_app(const std::string& name, const nlohmann::json& config);

std::vector<std::string> app_names();

// One full PageRank sweep expressed as a plain one-step job over the
// structure records, joining a frozen state table: the building block of
// the chained-jobs equivalence oracle. Arithmetic is shared with the
// iterative app so sums agree bitwise.
OneStepApp make_pagerank_sweep(std::shared_ptr<const std::map<std::string, std::string>> state,
                               double d, double base = 1.0);

// --- value format helpers (shared with the generators) ---------------------

std::vector<std::string> split_tokens(const std::string& text, char sep = ' ');

// Weighted adjacency "j:w;k:w;".
std::vector<std::pair<std::string, double>> parse_weighted_adjacency(const std::string& s);
std::string format_weighted_adjacency(const std::vector<std::pair<std::string, double>>& adj);

// Dense vector "x,y,z".
std::vector<double> parse_vector(const std::string& s);
std::string format_vector(const std::vector<double>& v);

// Centroid table "0:x,y|1:x,y|" in fixed id order.
std::vector<std::pair<std::string, std::vector<double>>> parse_centroids(const std::string& s);
std::string format_centroids(const std::vector<std::pair<std::string, std::vector<double>>>& cs);

}  // namespace imr
