#include "tilq/problem.hpp"

#include <cmath>
#include <sstream>

namespace tilq {

namespace {

bool all_finite(const Matrix& M) { return M.allFinite(); }

void check_path(std::ostringstream& errs, const char* name, const MatrixPath& path,
                int rows, int cols, int N) {
  if (static_cast<int>(path.size()) != N + 1) {
    errs << name << ": expected " << N + 1 << " node values, got " << path.size() << "\n";
    return;
  }
  for (int k = 0; k <= N; ++k) {
    if (path[k].rows() != rows || path[k].cols() != cols) {
      errs << name << "[" << k << "]: expected " << rows << "x" << cols << ", got "
           << path[k].rows() << "x" << path[k].cols() << "\n";
      return;
    }
    if (!all_finite(path[k])) {
      errs << name << "[" << k << "]: non-finite entry\n";
      return;
    }
  }
}

void check_path(std::ostringstream& errs, const char* name, const VectorPath& path,
                int rows, int N) {
  if (static_cast<int>(path.size()) != N + 1) {
    errs << name << ": expected " << N + 1 << " node values, got " << path.size() << "\n";
    return;
  }
  for (int k = 0; k <= N; ++k) {
    if (path[k].size() != rows) {
      errs << name << "[" << k << "]: expected length " << rows << ", got " << path[k].size()
           << "\n";
      return;
    }
    if (!path[k].allFinite()) {
      errs << name << "[" << k << "]: non-finite entry\n";
      return;
    }
  }
}

// Symmetrizes M in place; returns the max-norm of the correction applied.
// Subtracting the materialized skew part avoids aliasing M against its own
// transpose.
double symmetrize(Matrix& M) {
  Matrix skew = 0.5 * (M - M.transpose());
  M -= skew;
  return skew.size() == 0 ? 0.0 : skew.cwiseAbs().maxCoeff();
}

}  // namespace

TimeGrid TimeGrid::uniform(double T, int N) {
  if (!(T > 0.0) || N < 1) throw ProblemError("TimeGrid: need T > 0 and N >= 1");
  TimeGrid g;
  g.T = T;
  g.N = N;
  g.h = T / N;
  g.nodes.resize(N + 1);
  for (int i = 0; i <= N; ++i) g.nodes[i] = T * static_cast<double>(i) / N;
  g.nodes[N] = T;
  return g;
}

int node_at(const TimeGrid& grid, double s) {
  int k = static_cast<int>(std::lround(s / grid.h));
  if (k < 0) k = 0;
  if (k > grid.N) k = grid.N;
  double slack = 1e-9 * std::max(1.0, grid.T);
  if (std::abs(grid.nodes[k] - s) > slack)
    throw ProblemError("node_at: time " + std::to_string(s) + " is not a grid node");
  return k;
}

namespace {

// Shared index/weight logic for both path flavors. Returns the left node
// index and the interpolation weight in [0, 1].
std::pair<int, double> locate(const TimeGrid& grid, double s) {
  double slack = 1e-12 * std::max(1.0, std::abs(grid.T));
  if (s < -slack || s > grid.T + slack)
    throw ProblemError("sample: time " + std::to_string(s) + " outside [0, T]");
  if (s <= 0.0) return {0, 0.0};
  if (s >= grid.T) return {grid.N - 1, 1.0};
  int k = static_cast<int>(s / grid.h);
  if (k > grid.N - 1) k = grid.N - 1;
  if (k > 0 && s < grid.nodes[k]) --k;
  if (k < grid.N - 1 && s >= grid.nodes[k + 1]) ++k;
  double alpha = (s - grid.nodes[k]) / (grid.nodes[k + 1] - grid.nodes[k]);
  return {k, alpha};
}

}  // namespace

Matrix sample(const TimeGrid& grid, const MatrixPath& path, double s) {
  auto [k, alpha] = locate(grid, s);
  if (alpha == 0.0) return path[k];
  if (alpha == 1.0) return path[k + 1];
  return path[k] + alpha * (path[k + 1] - path[k]);
}

Vector sample(const TimeGrid& grid, const VectorPath& path, double s) {
  auto [k, alpha] = locate(grid, s);
  if (alpha == 0.0) return path[k];
  if (alpha == 1.0) return path[k + 1];
  return path[k] + alpha * (path[k + 1] - path[k]);
}

Coefficients make_zero_problem(int n, int m, double T, int N) {
  if (n < 1 || m < 1) throw ProblemError("make_zero_problem: need n >= 1 and m >= 1");
  Coefficients p;
  p.n = n;
  p.m = m;
  p.grid = TimeGrid::uniform(T, N);
  p.x0 = Vector::Zero(n);
  p.A = constant_path(Matrix::Zero(n, n), N);
  p.C = constant_path(Matrix::Zero(n, n), N);
  p.B = constant_path(Matrix::Zero(n, m), N);
  p.D = constant_path(Matrix::Zero(n, m), N);
  p.b = constant_path(Vector::Zero(n), N);
  p.sigma = constant_path(Vector::Zero(n), N);
  p.Q = constant_path(Matrix::Zero(n, n), N);
  p.Q_tilde = constant_path(Matrix::Zero(n, n), N);
  p.S = constant_path(Matrix::Zero(m, n), N);
  p.S_tilde = constant_path(Matrix::Zero(m, n), N);
  p.R = constant_path(Matrix::Zero(m, m), N);
  p.R_tilde = constant_path(Matrix::Zero(m, m), N);
  p.G = Matrix::Zero(n, n);
  p.G_tilde = Matrix::Zero(n, n);
  p.g = Vector::Zero(n);
  return p;
}

double validate(Coefficients& prob) {
  std::ostringstream errs;
  if (prob.n < 1) errs << "state dimension n must be >= 1\n";
  if (prob.m < 1) errs << "control dimension m must be >= 1\n";
  if (!(prob.grid.T > 0.0) || prob.grid.N < 1) errs << "grid: need T > 0 and N >= 1\n";
  if (static_cast<int>(prob.grid.nodes.size()) != prob.grid.N + 1)
    errs << "grid: node array size mismatch\n";
  if (!errs.str().empty()) throw ProblemError("validate: " + errs.str());

  int n = prob.n, m = prob.m, N = prob.grid.N;
  if (prob.x0.size() != n || !prob.x0.allFinite()) errs << "x0: expected finite length-" << n << " vector\n";
  check_path(errs, "A", prob.A, n, n, N);
  check_path(errs, "C", prob.C, n, n, N);
  check_path(errs, "B", prob.B, n, m, N);
  check_path(errs, "D", prob.D, n, m, N);
  check_path(errs, "b", prob.b, n, N);
  check_path(errs, "sigma", prob.sigma, n, N);
  check_path(errs, "Q", prob.Q, n, n, N);
  check_path(errs, "Q_tilde", prob.Q_tilde, n, n, N);
  check_path(errs, "S", prob.S, m, n, N);
  check_path(errs, "S_tilde", prob.S_tilde, m, n, N);
  check_path(errs, "R", prob.R, m, m, N);
  check_path(errs, "R_tilde", prob.R_tilde, m, m, N);
  if (prob.G.rows() != n || prob.G.cols() != n || !all_finite(prob.G))
    errs << "G: expected finite " << n << "x" << n << "\n";
  if (prob.G_tilde.rows() != n || prob.G_tilde.cols() != n || !all_finite(prob.G_tilde))
    errs << "G_tilde: expected finite " << n << "x" << n << "\n";
  if (prob.g.size() != n || !prob.g.allFinite()) errs << "g: expected finite length-" << n << " vector\n";
  if (!errs.str().empty()) throw ProblemError("validate: " + errs.str());

  double correction = 0.0;
  double scale = 0.0;
  auto sym_path = [&](MatrixPath& path) {
    for (auto& M : path) {
      scale = std::max(scale, M.size() ? M.cwiseAbs().maxCoeff() : 0.0);
      correction = std::max(correction, symmetrize(M));
    }
  };
  sym_path(prob.Q);
  sym_path(prob.Q_tilde);
  sym_path(prob.R);
  sym_path(prob.R_tilde);
  scale = std::max(scale, prob.G.cwiseAbs().maxCoeff());
  scale = std::max(scale, prob.G_tilde.cwiseAbs().maxCoeff());
  correction = std::max(correction, symmetrize(prob.G));
  correction = std::max(correction, symmetrize(prob.G_tilde));
  if (correction > 1e-8 * (1.0 + scale))
    throw ProblemError("validate: quadratic-form weight asymmetry " + std::to_string(correction) +
                       " exceeds round-off tolerance");
  prob.symmetrization_correction = correction;
  return correction;
}

Aggregates aggregates(const Coefficients& prob) {
  Aggregates agg;
  int N = prob.grid.N;
  agg.R.resize(N + 1);
  agg.Q.resize(N + 1);
  agg.S.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    agg.R[k] = prob.R[k] + prob.R_tilde[k];
    agg.Q[k] = prob.Q[k] + prob.Q_tilde[k];
    agg.S[k] = prob.S[k] + prob.S_tilde[k];
  }
  agg.G = prob.G + prob.G_tilde;
  return agg;
}

FeedbackControl zero_control(const Coefficients& prob) {
  FeedbackControl c;
  c.Theta1 = constant_path(Matrix::Zero(prob.m, prob.n), prob.grid.N);
  c.Theta2 = constant_path(Matrix::Zero(prob.m, prob.n), prob.grid.N);
  c.phi = constant_path(Vector::Zero(prob.m), prob.grid.N);
  return c;
}

FeedbackControl control_from_open(const Coefficients& prob, const VectorPath& u) {
  if (static_cast<int>(u.size()) != prob.grid.N + 1)
    throw ProblemError("control_from_open: control path must have one value per node");
  FeedbackControl c = zero_control(prob);
  c.phi = u;
  return c;
}

}  // namespace tilq
