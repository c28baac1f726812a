// Internal step-level interface of the backward kernel sweeps. The gain
// synthesis loops drive single steps directly (fixed-point iteration on
// the node gains), and the plain solvers loop over the very same step
// functions, so a kernel re-solved with a stored strategy reproduces the
// synthesized sweep bit-for-bit.
#pragma once

#include "tilq/problem.hpp"

namespace tilq::detail {

struct Blocks {
  Matrix P1, P2;
  Vector P3, P4;
};

/// Terminal node values (-G, -G_tilde, 0, -g).
Blocks terminal_blocks(const Coefficients& prob);

/// One backward RK4 step of the representation system from node
/// k_left + 1 to node k_left, with the gain and affine parts linearly
/// interpolated between their node values inside the step.
Blocks rep_step(const Coefficients& prob, int k_left, const Matrix& Theta_left,
                const Matrix& Theta_right, const Vector& phi_left, const Vector& phi_right,
                const Blocks& right);

/// Same for the strategy system; re-symmetrizes the matrix blocks after
/// the step and accumulates the dropped skew norm into *correction.
Blocks strategy_step(const Coefficients& prob, int k_left, const Matrix& Theta_left,
                     const Matrix& Theta_right, const Vector& phi_left, const Vector& phi_right,
                     const Blocks& right, double* correction);

/// Node-wise algebraic system tying gains to kernel blocks:
/// Mso Theta = Wg and Mso phi = Wa with Mso = R_agg - D'P1 D.
struct GainSystem {
  Matrix Mso;  // m x m
  Matrix Wg;   // m x n
  Vector Wa;   // m
};

GainSystem gain_system(const Coefficients& prob, int node, const Blocks& blocks);

}  // namespace tilq::detail
