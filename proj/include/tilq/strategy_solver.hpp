// Closed-loop equilibrium strategies: backward kernel sweep with
// symmetric matrix blocks, gain synthesis, divergence diagnostics against
// the representation solver, and a classical Riccati reference for the
// time-consistent specialization.
#pragma once

#include "tilq/equilibrium_report.hpp"
#include "tilq/kernel_ode.hpp"

namespace tilq {

struct StrategySynthesis {
  StrategyPair strategy;  ///< kind = equilibrium_strategy
  KernelSolution kernel;
  EquilibriumReport report;
};

/// Synthesizes the minimum-norm closed-loop equilibrium strategy. The
/// second-order margin uses this sweep's own symmetric matrix kernel. The
/// range_slack fields report the least-squares solvability residuals of
/// the two gain systems. Output is independent of x0.
StrategySynthesis synthesize_strategy(const Coefficients& prob, const SolverOptions& opts = {});

/// Node-wise divergence between the two closed-loop notions on the same
/// problem; for time-consistent data everything here collapses to zero,
/// and a conditional terminal weight drives the two kernels (and the
/// representation kernel's symmetry defect) apart.
struct RepStrategyComparison {
  std::vector<double> P1_diff;            ///< max-abs difference of matrix kernels
  std::vector<double> gain_diff;          ///< max-abs difference of Theta paths
  std::vector<double> rep_P1_asym;        ///< max-abs of P1 - P1^T, representation sweep
  std::vector<double> strategy_P1_asym;   ///< same for the strategy sweep
  double max_P1_diff = 0.0;
  double max_gain_diff = 0.0;
  double max_rep_P1_asym = 0.0;
  double max_strategy_P1_asym = 0.0;
};

RepStrategyComparison compare_rep_vs_strategy(const Coefficients& prob,
                                              const SolverOptions& opts = {});

/// Classical time-consistent LQ reference: the standard backward Riccati
/// flow (terminal G) and its optimal feedback gain, computed with a plain
/// factorization solve instead of the pseudo-inverse machinery. Requires
/// the conditional (tilde) weights to vanish.
struct ClassicalSolution {
  MatrixPath P;     // n x n
  MatrixPath gain;  // m x n
};

ClassicalSolution classical_riccati_oracle(const Coefficients& prob);

}  // namespace tilq
