#include "tilq/linalg.hpp"

#include <Eigen/SVD>

namespace tilq {

PinvResult pinv(const Matrix& M, double rtol) {
  PinvResult out;
  if (M.size() == 0) {
    out.pinv = M.transpose();
    return out;
  }
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  out.cutoff = sv.size() ? rtol * sv(0) : 0.0;
  Eigen::VectorXd inv_sv = Eigen::VectorXd::Zero(sv.size());
  for (int i = 0; i < sv.size(); ++i) {
    if (sv(i) > out.cutoff && sv(i) > 0.0) {
      inv_sv(i) = 1.0 / sv(i);
      ++out.rank;
    }
  }
  out.pinv = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

double psd_margin(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

RangeCheck range_inclusion(const Matrix& W, const Matrix& M, double tol) {
  RangeCheck out;
  PinvResult pi = pinv(M);
  Matrix residual = W - M * (pi.pinv * W);
  out.slack = residual.norm() / (1.0 + W.norm());
  out.contained = out.slack <= tol;
  return out;
}

Matrix solve_affine(const Matrix& M, const Matrix& rhs, double rtol) {
  return pinv(M, rtol).pinv * rhs;
}

Vector solve_affine(const Matrix& M, const Vector& rhs, double rtol) {
  return Vector(pinv(M, rtol).pinv * rhs);
}

}  // namespace tilq
