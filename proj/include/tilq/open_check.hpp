// Open-loop equilibrium check for a fixed deterministic control: the
// stationarity identity tied to the control's kernel solution, evaluated
// along the exact mean trajectory and along sample paths when the
// dynamics carry noise, plus the control-independent second-order margin.
#pragma once

#include "tilq/equilibrium_report.hpp"
#include "tilq/kernel_ode.hpp"

#include <cstdint>

namespace tilq {

struct OpenCheckOptions {
  SolverOptions solver;
  std::uint64_t seed = 0x5eed5eedull;
  int sample_paths = 8;
};

/// Verdict requires the stationarity residual within res_tol along the
/// mean trajectory and along every sampled path (the identity is affine
/// in the state, so it must hold pathwise under nondegenerate noise; a
/// mean-only check could mask sign-varying violations), and the
/// second-order margin within psd_tol of nonnegative. Per-path maxima are
/// listed sorted in the diagnostics. Range fields are zero filled; they
/// have no meaning for a fixed control.
EquilibriumReport check_open(const Coefficients& prob, const VectorPath& u,
                             const OpenCheckOptions& opts = {});

struct MarginReport {
  std::vector<double> margin;
  bool verdict = false;
};

/// Second-order condition margins; these depend only on the problem data,
/// never on the candidate control.
MarginReport second_order_condition(const Coefficients& prob, const SolverOptions& opts = {});

}  // namespace tilq
