// Shared report and tolerance types for the equilibrium solvers and the
// open-loop candidate checker.
#pragma once

#include <string>
#include <vector>

namespace tilq {

struct SolverOptions {
  double pinv_rtol = 1e-10;       ///< singular-value cutoff for gain solves
  double psd_tol = 1e-8;          ///< allowed negativity of second-order margins
  double res_tol = 1e-8;          ///< allowed first-order residual
  double range_tol = 1e-8;        ///< allowed range-inclusion slack
  double fixed_point_tol = 1e-13; ///< per-step gain fixed-point stop
  int max_fixed_point_iters = 12;
};

/// Node-wise verdict data: second-order margins (smallest eigenvalue of
/// the relevant weighted control Hessian), norms of the first-order
/// algebraic identity residuals, and range/solvability slacks for the
/// gain and affine linear systems.
struct EquilibriumReport {
  std::vector<double> second_order_margin;
  std::vector<double> first_order_residual;
  std::vector<double> range_slack_gain;
  std::vector<double> range_slack_affine;
  bool verdict = false;
  std::string diagnostics;
};

/// Applies the shared verdict rule: margins may dip psd_tol below zero,
/// residuals and slacks must stay within their tolerances.
bool equilibrium_verdict(const EquilibriumReport& report, const SolverOptions& opts);

}  // namespace tilq
