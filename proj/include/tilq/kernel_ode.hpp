// Backward kernel ODE systems. Each equilibrium notion is characterized by
// four coupled backward equations: two matrix-valued (P1, P2) and two
// vector-valued (P3, P4), integrated by a fixed-step RK4 sweep from the
// terminal node. The variants differ only in how the control enters the
// drift; their right-hand sides are assembled separately so that the
// pairwise reduction relations between them are testable statements, not
// tautologies.
#pragma once

#include "tilq/problem.hpp"

#include <functional>

namespace tilq {

/// Numerical failure inside a sweep (blow-up or a non-convergent gain
/// fixed point); carries the grid node where it happened.
struct SolverError : std::runtime_error {
  int node = -1;
  SolverError(const std::string& what, int node_index)
      : std::runtime_error(what + " (node " + std::to_string(node_index) + ")"), node(node_index) {}
};

enum class KernelVariant { open, closed_rep, closed_strategy, generic };

/// Solution of one backward kernel family on the problem grid. The
/// martingale-correction paths L3, L4 vanish identically for the
/// deterministic coefficient data handled here; they are kept so the
/// adjoint formulas can reference them uniformly.
struct KernelSolution {
  KernelVariant variant = KernelVariant::open;
  MatrixPath P1, P2;  // n x n
  VectorPath P3, P4;  // n
  VectorPath L3, L4;  // n, identically zero
  /// Largest per-step symmetry correction applied (strategy sweeps only).
  double symmetry_correction = 0.0;
};

/// Coefficients of the variant-agnostic backward family
///   dP1 = -[P1 A1 + C1 P1 + C2 P1 B1 + C3] ds,        P1(T) = D1,
///   dP2 = -[P2 A1 + C1 P2 + C4] ds,                   P2(T) = D2,
///   dP3 = -[C1 P3 + P2 A2 + C6] ds,                   P3(T) = 0,
///   dP4 = -[C1 P4 + C2 (P1 B2 + L4) + P1 A2 + C5] ds, P4(T) = D3,
/// with L4 = 0 for deterministic data. Every concrete kernel system is an
/// instance of this family under a suitable coefficient substitution.
struct GenericBackwardSpec {
  int n = 0;
  MatrixPath A1, B1, C1, C2, C3, C4;  // n x n
  VectorPath A2, B2, C5, C6;          // n
  Matrix D1, D2;                      // n x n
  Vector D3;                          // n
};

/// Classic fixed-step RK4 run backward from the terminal node; returns one
/// value per node with path[N] = terminal. Throws SolverError if the state
/// norm exceeds 1e12 or turns non-finite.
std::vector<Vector> integrate_backward(const TimeGrid& grid, const Vector& terminal,
                                       const std::function<Vector(double, const Vector&)>& rhs);

/// Kernel system for a fixed deterministic open-loop control u (one value
/// per node, linearly interpolated). P1 and P2 do not depend on u.
KernelSolution solve_open_kernel(const Coefficients& prob, const VectorPath& u);

/// Kernel system for a closed-loop representation pair: the gain feeds the
/// P1 and P2 drifts, the affine part feeds P3 and P4.
KernelSolution solve_rep_kernel(const Coefficients& prob, const StrategyPair& strategy);

/// Kernel system for a closed-loop equilibrium strategy: the drifts are
/// driven by the feedback-modified coefficients A + B Theta, C + D Theta
/// and the Theta-completed weights. P1 and P2 are symmetric; the sweep
/// re-symmetrizes after every step and records the largest correction.
KernelSolution solve_strategy_kernel(const Coefficients& prob, const StrategyPair& strategy);

/// Kernel system for the general spiked control family
///   u = Theta1 X_realized + Theta2 X_base + phi.
/// Specializes to the representation system (Theta1 = 0), the strategy
/// system (Theta2 = 0) and the open system (both zero, phi = u).
KernelSolution solve_combined_kernel(const Coefficients& prob, const FeedbackControl& control);

/// Variant-agnostic family solver.
KernelSolution solve_generic_kernel(const GenericBackwardSpec& spec, const TimeGrid& grid);

/// Second-order expansion kernel: the strategy-system matrix equation
/// driven by the plain (non-tilde) weights only, terminal -G. Its value at
/// the spike time prices the quadratic spike response. Symmetrized per
/// step like the strategy sweep.
MatrixPath solve_second_order_kernel(const Coefficients& prob, const MatrixPath& Theta1);

/// Adjoint pair evaluated from a kernel solution along deterministic
/// trajectories: M(s) = P1 x + P2 xbar + P3 + P4 (xbar the conditional
/// mean), its diagonal M(s, s) = (P1 + P2) x + P3 + P4, and
/// N(s) = P1 (C x + D u + sigma) + L4.
struct AdjointPair {
  const Coefficients* prob = nullptr;
  const KernelSolution* kernel = nullptr;

  Vector M(double s, const Vector& x, const Vector& x_mean) const;
  Vector M_diag(double s, const Vector& x) const;
  Vector N(double s, const Vector& x, const Vector& u) const;
};

/// Node-wise residual of the decoupled adjoint drift identity along the
/// mean trajectory started at the problem's x0 at time t: the time
/// derivative of M(s, t) (second-order finite differences, one-sided at
/// the ends) plus the drift the adjoint equation prescribes. For t = T the
/// path degenerates to the single terminal-identity residual
/// ||M(T, T) + (G + G_tilde) x(T) + g||.
std::vector<double> decoupling_residual(const KernelSolution& kernel, const Coefficients& prob,
                                        const VectorPath& u, double t);

/// Deterministic mean flow under an affine control, started at xi at grid
/// time t0 (must be a node). Nodes before t0 hold xi. The mean of the
/// state equation does not see sigma, so this is exact for noisy dynamics
/// as well.
VectorPath mean_trajectory(const Coefficients& prob, const FeedbackControl& control, double t0,
                           const Vector& xi);

}  // namespace tilq
