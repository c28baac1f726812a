// Closed-loop representation of open-loop equilibrium controls: solves the
// coupled backward kernel system whose algebraic gain equations produce
// the representation pair (Theta, phi), and reports the equilibrium
// conditions (second-order margin, first-order residuals, range slack).
#pragma once

#include "tilq/equilibrium_report.hpp"
#include "tilq/kernel_ode.hpp"

namespace tilq {

struct RepSynthesis {
  StrategyPair strategy;  ///< kind = representation
  KernelSolution kernel;
  EquilibriumReport report;
};

/// Synthesizes the minimum-norm representation pair by a backward sweep
/// with per-step gain fixed points. The second-order margin reported is
/// the one the open-loop equilibrium conditions require, computed from the
/// control-independent matrix kernel of the open system, not from this
/// sweep's own P1. Range failures degrade the verdict, they do not abort.
/// Output is independent of x0 (nothing in the sweep reads it).
RepSynthesis synthesize_rep(const Coefficients& prob, const SolverOptions& opts = {});

struct FirstOrderResiduals {
  std::vector<double> gain;    ///< per node
  std::vector<double> affine;  ///< per node
};

/// Node-wise normalized residuals of the two algebraic identities tying a
/// candidate pair to a kernel solution.
FirstOrderResiduals rep_first_order_residual(const Coefficients& prob,
                                             const StrategyPair& candidate,
                                             const KernelSolution& kernel);

}  // namespace tilq
