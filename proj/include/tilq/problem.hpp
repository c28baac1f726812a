// Problem data model for time-inconsistent stochastic linear-quadratic
// control on a uniform time grid: state/weight coefficients, conditional
// (tilde) weights, aggregate sums, and affine feedback controls.
#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace tilq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One value per grid node; piecewise-linear in between (see sample()).
using MatrixPath = std::vector<Matrix>;
using VectorPath = std::vector<Vector>;

struct ProblemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Uniform partition of [0, T] into N steps (N + 1 nodes).
struct TimeGrid {
  double T = 1.0;
  int N = 1;
  double h = 1.0;
  std::vector<double> nodes;

  static TimeGrid uniform(double T, int N);
};

/// Index of the node closest to s; throws if s is not a node up to
/// round-off (1e-9 relative to the horizon).
int node_at(const TimeGrid& grid, double s);

/// Piecewise-linear interpolation of node values. Exact at nodes, never
/// extrapolates: s outside [0, T] (beyond round-off slack) is an error.
Matrix sample(const TimeGrid& grid, const MatrixPath& path, double s);
Vector sample(const TimeGrid& grid, const VectorPath& path, double s);

/// N + 1 copies of one node value; accepts Eigen expressions and picks the
/// path type (matrix or vector) from the expression's plain type.
template <class Derived>
std::vector<typename Derived::PlainObject> constant_path(const Eigen::MatrixBase<Derived>& value,
                                                         int N) {
  using Plain = typename Derived::PlainObject;
  return std::vector<Plain>(static_cast<std::size_t>(N) + 1, Plain(value));
}

/// Coefficients of the controlled state equation
///   dX = [A X + B u + b] ds + [C X + D u + sigma] dW   (scalar W)
/// and of the cost functional with both plain and conditional-mean
/// (tilde) weights. Quadratic-form weights are stored symmetrized.
struct Coefficients {
  int n = 0;  ///< state dimension
  int m = 0;  ///< control dimension
  TimeGrid grid;
  Vector x0;

  MatrixPath A, C;        // n x n
  MatrixPath B, D;        // n x m
  VectorPath b, sigma;    // n

  MatrixPath Q, Q_tilde;  // n x n, symmetric
  MatrixPath S, S_tilde;  // m x n
  MatrixPath R, R_tilde;  // m x m, symmetric
  Matrix G, G_tilde;      // n x n, symmetric
  Vector g;               // n

  /// Largest symmetrization correction applied by validate().
  double symmetrization_correction = 0.0;
};

/// All-zero coefficient set with consistent shapes (handy starting point
/// for building instances field by field).
Coefficients make_zero_problem(int n, int m, double T, int N);

/// Shape, finiteness and symmetry checks. Symmetrizes the quadratic-form
/// weights in place and returns the largest correction; a correction
/// above 1e-8 (relative) is treated as corrupt input and throws.
/// Idempotent: a second call returns 0.
double validate(Coefficients& prob);

/// Sums of paired weights: R + R_tilde, Q + Q_tilde, S + S_tilde,
/// G + G_tilde. These drive every algebraic gain equation.
struct Aggregates {
  MatrixPath R;  // m x m
  MatrixPath Q;  // n x n
  MatrixPath S;  // m x n
  Matrix G;      // n x n
};

Aggregates aggregates(const Coefficients& prob);

/// Affine control law u(s) = Theta1(s) X(s) + Theta2(s) Xbase(s) + phi(s).
/// Theta1 multiplies the state actually realized under the control
/// (re-entering feedback); Theta2 multiplies the unperturbed base state,
/// which is how open-loop candidates with a feedback representation are
/// probed without the spike re-entering the loop. A plain deterministic
/// control is Theta1 = Theta2 = 0, phi = u.
struct FeedbackControl {
  MatrixPath Theta1;  // m x n
  MatrixPath Theta2;  // m x n
  VectorPath phi;     // m
};

FeedbackControl zero_control(const Coefficients& prob);
FeedbackControl control_from_open(const Coefficients& prob, const VectorPath& u);

enum class StrategyKind { representation, equilibrium_strategy };

/// Time-varying feedback pair (Theta, phi) produced by the solvers.
struct StrategyPair {
  MatrixPath Theta;  // m x n
  VectorPath phi;    // m
  StrategyKind kind = StrategyKind::representation;
};

}  // namespace tilq
