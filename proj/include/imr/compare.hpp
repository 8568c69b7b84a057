#pragma once

#include <filesystem>

#include <json.hpp>

namespace imr {

// Structural and numeric diff of two run outputs. Accepts either a workdir
// (its output/ subdirectory is used) or a bare directory of run files.
// "pass" in the returned object requires matching key sets, aligned value
// multiplicity, and every numeric component within `tol` relative error;
// non-numeric payloads must match byte for byte. `sample` caps how many
// offending keys each sample list carries.
nlohmann::json compare_outputs(const std::filesystem::path& a, const std::filesystem::path& b,
                               double tol = 0.0, int sample = 10);

}  // namespace imr
