// Dense helpers behind the gain equations: SVD pseudo-inverse,
// symmetric-part eigenvalue margin, and range-inclusion diagnostics.
#pragma once

#include "tilq/problem.hpp"

namespace tilq {

struct PinvResult {
  Matrix pinv;
  int rank = 0;
  double cutoff = 0.0;  ///< singular values <= cutoff were treated as zero
};

/// Moore-Penrose pseudo-inverse with singular values below
/// rtol * sigma_max dropped.
PinvResult pinv(const Matrix& M, double rtol = 1e-10);

/// Smallest eigenvalue of the symmetric part (M + M^T) / 2.
double psd_margin(const Matrix& M);

struct RangeCheck {
  bool contained = false;
  double slack = 0.0;  ///< ||(I - M M^+) W||_F / (1 + ||W||_F)
};

/// Whether every column of W lies in the column space of M, up to tol.
RangeCheck range_inclusion(const Matrix& W, const Matrix& M, double tol = 1e-8);

/// Minimum-norm least-squares solution M^+ rhs.
Matrix solve_affine(const Matrix& M, const Matrix& rhs, double rtol = 1e-10);
Vector solve_affine(const Matrix& M, const Vector& rhs, double rtol = 1e-10);

}  // namespace tilq
