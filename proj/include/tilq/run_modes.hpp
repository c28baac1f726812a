// Mode dispatch behind the command-line front end: loads a JSON config,
// executes one solver or verifier mode, and persists report.json plus the
// per-curve CSV artifacts.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace tilq {

struct RunConfig {
  std::string config_path;
  std::string mode;
  std::string out_dir = "tilq-out";
  // Flag overrides; when absent the config file (or the defaults) decide.
  std::optional<std::uint64_t> seed;
  std::optional<int> paths;
  std::optional<int> inner;
  std::optional<double> tol_psd;
  std::optional<double> tol_res;
  std::optional<double> tol_range;
};

/// Runs one mode end to end and returns the process exit status: 0 when
/// the verdict is true (or the mode is purely computational), 1 when the
/// verdict is false, 2 on configuration or input errors, 3 on solver
/// failures. Reports carry no timestamps or absolute paths, so identical
/// configs produce byte-identical report.json files.
int run_mode(const RunConfig& cfg);

}  // namespace tilq
