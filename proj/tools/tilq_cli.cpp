// Command-line front end: parses flags, hands off to the mode runner, and
// maps its status straight to the process exit code.
#include <CLI11.hpp>

#include <cstdint>
#include <string>

#include "tilq/run_modes.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium solvers and Monte Carlo verification for "
               "conditional-mean linear-quadratic control"};

  tilq::RunConfig cfg;
  std::uint64_t seed = 0;
  int paths = 0, inner = 0;
  double tol_psd = 0.0, tol_res = 0.0, tol_range = 0.0;

  app.add_option("--config", cfg.config_path, "Problem/config JSON file")->required();
  app.add_option("--mode", cfg.mode,
                 "One of: solve-rep, solve-strategy, check-open, verify-mc, compare, "
                 "reduce-classical")
      ->required();
  app.add_option("--out", cfg.out_dir, "Output directory (default tilq-out)");
  auto* seed_opt = app.add_option("--seed", seed, "Base seed for Monte Carlo modes");
  auto* paths_opt = app.add_option("--paths", paths, "Outer Monte Carlo path count");
  auto* inner_opt = app.add_option("--inner", inner, "Inner (conditional-mean) path count");
  auto* psd_opt = app.add_option("--tol-psd", tol_psd, "Second-order margin tolerance");
  auto* res_opt = app.add_option("--tol-res", tol_res, "First-order residual tolerance");
  auto* range_opt = app.add_option("--tol-range", tol_range, "Range-inclusion slack tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (seed_opt->count()) cfg.seed = seed;
  if (paths_opt->count()) cfg.paths = paths;
  if (inner_opt->count()) cfg.inner = inner;
  if (psd_opt->count()) cfg.tol_psd = tol_psd;
  if (res_opt->count()) cfg.tol_res = tol_res;
  if (range_opt->count()) cfg.tol_range = tol_range;

  return tilq::run_mode(cfg);
}
