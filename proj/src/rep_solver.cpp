#include "tilq/rep_solver.hpp"

#include "tilq/linalg.hpp"
#include "synth_common.hpp"

#include <algorithm>
#include <sstream>

namespace tilq {

namespace {

double min_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
}

double max_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

}  // namespace

bool equilibrium_verdict(const EquilibriumReport& report, const SolverOptions& opts) {
  return min_of(report.second_order_margin) >= -opts.psd_tol &&
         max_of(report.first_order_residual) <= opts.res_tol &&
         max_of(report.range_slack_gain) <= opts.range_tol &&
         max_of(report.range_slack_affine) <= opts.range_tol;
}

RepSynthesis synthesize_rep(const Coefficients& prob, const SolverOptions& opts) {
  auto step = [&prob](int k, const Matrix& Th_l, const Matrix& Th_r, const Vector& ph_l,
                      const Vector& ph_r, const detail::Blocks& right, double*) {
    return detail::rep_step(prob, k, Th_l, Th_r, ph_l, ph_r, right);
  };
  detail::SynthesizedSweep sweep =
      detail::synthesize_sweep(prob, opts, step, KernelVariant::closed_rep);

  RepSynthesis out;
  out.strategy.Theta = std::move(sweep.Theta);
  out.strategy.phi = std::move(sweep.phi);
  out.strategy.kind = StrategyKind::representation;
  out.kernel = std::move(sweep.kernel);

  const int N = prob.grid.N;
  EquilibriumReport& rep = out.report;
  rep.second_order_margin.resize(N + 1);
  rep.first_order_residual.resize(N + 1);
  rep.range_slack_gain.resize(N + 1);
  rep.range_slack_affine.resize(N + 1);

  // The second-order condition weighs D against the matrix kernel of the
  // open system, which does not depend on any control.
  KernelSolution open_kernel =
      solve_open_kernel(prob, constant_path(Vector::Zero(prob.m), N));
  for (int k = 0; k <= N; ++k) {
    Matrix R_agg = prob.R[k] + prob.R_tilde[k];
    rep.second_order_margin[k] =
        psd_margin(R_agg - prob.D[k].transpose() * open_kernel.P1[k] * prob.D[k]);
    rep.first_order_residual[k] = std::max(sweep.residual_gain[k], sweep.residual_affine[k]);
    rep.range_slack_gain[k] =
        range_inclusion(sweep.systems[k].Wg, sweep.systems[k].Mso, opts.range_tol).slack;
    rep.range_slack_affine[k] =
        range_inclusion(sweep.systems[k].Wa, sweep.systems[k].Mso, opts.range_tol).slack;
  }
  rep.verdict = equilibrium_verdict(rep, opts);
  std::ostringstream diag;
  diag << "representation sweep: min margin " << min_of(rep.second_order_margin)
       << ", max residual " << max_of(rep.first_order_residual) << ", max range slack "
       << std::max(max_of(rep.range_slack_gain), max_of(rep.range_slack_affine))
       << ", gain fixed-point iters <= " << sweep.max_iters_used;
  rep.diagnostics = diag.str();
  return out;
}

FirstOrderResiduals rep_first_order_residual(const Coefficients& prob,
                                             const StrategyPair& candidate,
                                             const KernelSolution& kernel) {
  const int N = prob.grid.N;
  if (static_cast<int>(candidate.Theta.size()) != N + 1 ||
      static_cast<int>(candidate.phi.size()) != N + 1)
    throw ProblemError("rep_first_order_residual: strategy must have one value per node");
  FirstOrderResiduals res;
  res.gain.resize(N + 1);
  res.affine.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    detail::Blocks y{kernel.P1[k], kernel.P2[k], kernel.P3[k], kernel.P4[k]};
    detail::GainSystem gs = detail::gain_system(prob, k, y);
    res.gain[k] = (gs.Mso * candidate.Theta[k] - gs.Wg).norm() / (1.0 + gs.Wg.norm());
    res.affine[k] = (gs.Mso * candidate.phi[k] - gs.Wa).norm() / (1.0 + gs.Wa.norm());
  }
  return res;
}

}  // namespace tilq
