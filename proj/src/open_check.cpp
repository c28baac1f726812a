#include "tilq/open_check.hpp"

#include "tilq/linalg.hpp"
#include "tilq/mc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tilq {

namespace {

// Stationarity residual at node k for state value x:
// R_agg u + S_agg x - B' M(s, s) - D' N(s) with M, N from the kernel.
Vector stationarity_residual(const Coefficients& prob, const KernelSolution& kernel, int k,
                             const Vector& x, const Vector& u) {
  Matrix R_agg = prob.R[k] + prob.R_tilde[k];
  Matrix S_agg = prob.S[k] + prob.S_tilde[k];
  Vector M = (kernel.P1[k] + kernel.P2[k]) * x + kernel.P3[k] + kernel.P4[k];
  Vector N = kernel.P1[k] * (prob.C[k] * x + prob.D[k] * u + prob.sigma[k]) + kernel.L4[k];
  return R_agg * u + S_agg * x - prob.B[k].transpose() * M - prob.D[k].transpose() * N;
}

}  // namespace

EquilibriumReport check_open(const Coefficients& prob, const VectorPath& u,
                             const OpenCheckOptions& opts) {
  const int N = prob.grid.N;
  if (static_cast<int>(u.size()) != N + 1)
    throw ProblemError("check_open: control path must have one value per node");

  KernelSolution kernel = solve_open_kernel(prob, u);

  EquilibriumReport report;
  report.second_order_margin.resize(N + 1);
  report.first_order_residual.resize(N + 1);
  report.range_slack_gain.assign(N + 1, 0.0);
  report.range_slack_affine.assign(N + 1, 0.0);

  for (int k = 0; k <= N; ++k) {
    Matrix R_agg = prob.R[k] + prob.R_tilde[k];
    report.second_order_margin[k] =
        psd_margin(R_agg - prob.D[k].transpose() * kernel.P1[k] * prob.D[k]);
  }

  VectorPath x_mean = mean_trajectory(prob, control_from_open(prob, u), 0.0, prob.x0);
  double worst_mean = 0.0;
  for (int k = 0; k <= N; ++k) {
    report.first_order_residual[k] =
        stationarity_residual(prob, kernel, k, x_mean[k], u[k]).norm();
    worst_mean = std::max(worst_mean, report.first_order_residual[k]);
  }

  bool noisy = false;
  for (int k = 0; k <= N && !noisy; ++k)
    noisy = prob.sigma[k].cwiseAbs().maxCoeff() > 0.0 || prob.C[k].cwiseAbs().maxCoeff() > 0.0 ||
            prob.D[k].cwiseAbs().maxCoeff() > 0.0;

  std::vector<double> path_maxima;
  if (noisy && opts.sample_paths > 0) {
    SimulationEnsemble ens = simulate(prob, control_from_open(prob, u), prob.x0, 0.0, opts.seed,
                                      /*stream=*/2, opts.sample_paths);
    path_maxima.resize(ens.n_paths, 0.0);
    for (int p = 0; p < ens.n_paths; ++p)
      for (int k = 0; k <= N; ++k)
        path_maxima[p] = std::max(
            path_maxima[p], stationarity_residual(prob, kernel, k, ens.X[p][k], u[k]).norm());
    std::sort(path_maxima.begin(), path_maxima.end());
  }

  double worst_path = path_maxima.empty() ? 0.0 : path_maxima.back();
  double min_margin =
      *std::min_element(report.second_order_margin.begin(), report.second_order_margin.end());
  report.verdict = min_margin >= -opts.solver.psd_tol &&
                   std::max(worst_mean, worst_path) <= opts.solver.res_tol;

  std::ostringstream diag;
  diag << "open-loop check: min margin " << min_margin << ", mean-trajectory residual "
       << worst_mean;
  if (!path_maxima.empty()) {
    diag << ", per-path residual maxima (sorted):";
    for (double r : path_maxima) diag << " " << r;
  }
  report.diagnostics = diag.str();
  return report;
}

MarginReport second_order_condition(const Coefficients& prob, const SolverOptions& opts) {
  const int N = prob.grid.N;
  KernelSolution kernel = solve_open_kernel(prob, constant_path(Vector::Zero(prob.m), N));
  MarginReport out;
  out.margin.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    Matrix R_agg = prob.R[k] + prob.R_tilde[k];
    out.margin[k] = psd_margin(R_agg - prob.D[k].transpose() * kernel.P1[k] * prob.D[k]);
  }
  out.verdict = *std::min_element(out.margin.begin(), out.margin.end()) >= -opts.psd_tol;
  return out;
}

}  // namespace tilq
