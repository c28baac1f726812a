#include "tilq/kernel_ode.hpp"

#include "tilq/detail/kernel_steps.hpp"

#include <cmath>

// The four-block backward state is integrated jointly: the matrix blocks
// never read the vector blocks, so the joint sweep leaves P1, P2 identical
// to a matrix-only sweep while the vector equations see stage-consistent
// matrix values.

namespace tilq {
namespace {

using detail::Blocks;

Blocks blocks_axpy(const Blocks& y, double a, const Blocks& d) {
  return {y.P1 + a * d.P1, y.P2 + a * d.P2, y.P3 + a * d.P3, y.P4 + a * d.P4};
}

double blocks_norm(const Blocks& y) {
  return std::max(std::max(y.P1.cwiseAbs().maxCoeff(), y.P2.cwiseAbs().maxCoeff()),
                  std::max(y.P3.size() ? y.P3.cwiseAbs().maxCoeff() : 0.0,
                           y.P4.size() ? y.P4.cwiseAbs().maxCoeff() : 0.0));
}

bool blocks_finite(const Blocks& y) {
  return y.P1.allFinite() && y.P2.allFinite() && y.P3.allFinite() && y.P4.allFinite();
}

using BlockDrift = std::function<Blocks(double, const Blocks&)>;

// One backward RK4 step from t_right to t_right - h.
Blocks rk4_blocks_back(double t_right, double h, const Blocks& y, const BlockDrift& f) {
  Blocks k1 = f(t_right, y);
  Blocks k2 = f(t_right - 0.5 * h, blocks_axpy(y, -0.5 * h, k1));
  Blocks k3 = f(t_right - 0.5 * h, blocks_axpy(y, -0.5 * h, k2));
  Blocks k4 = f(t_right - h, blocks_axpy(y, -h, k3));
  Blocks sum = blocks_axpy(k1, 2.0, k2);
  sum = blocks_axpy(sum, 2.0, k3);
  sum = blocks_axpy(sum, 1.0, k4);
  return blocks_axpy(y, -h / 6.0, sum);
}

void check_blocks(const Blocks& y, int node) {
  if (!blocks_finite(y) || blocks_norm(y) > 1e12)
    throw SolverError("kernel sweep diverged", node);
}

// Symmetrizes M in place, returns the max-norm of the dropped skew part.
// The skew part is materialized first so M never aliases its own
// transpose mid-assignment.
double resym(Matrix& M) {
  Matrix skew = 0.5 * (M - M.transpose());
  M -= skew;
  return skew.cwiseAbs().maxCoeff();
}

template <typename V>
V lerp(const V& left, const V& right, double w) {
  return left + w * (right - left);
}

KernelSolution init_solution(const Coefficients& prob, KernelVariant variant) {
  KernelSolution sol;
  sol.variant = variant;
  int N = prob.grid.N;
  sol.P1.resize(N + 1);
  sol.P2.resize(N + 1);
  sol.P3.resize(N + 1);
  sol.P4.resize(N + 1);
  sol.L3 = constant_path(Vector::Zero(prob.n), N);
  sol.L4 = constant_path(Vector::Zero(prob.n), N);
  return sol;
}

void store_node(KernelSolution& sol, int k, const Blocks& y) {
  sol.P1[k] = y.P1;
  sol.P2[k] = y.P2;
  sol.P3[k] = y.P3;
  sol.P4[k] = y.P4;
}

}  // namespace

namespace detail {

Blocks terminal_blocks(const Coefficients& prob) {
  return {-prob.G, -prob.G_tilde, Vector::Zero(prob.n), -prob.g};
}

// ---------- representation step ----------
// dP1 = -[P1 A + A'P1 + C'P1 C + (P1 B + C'P1 D - S') Theta - Q] ds
// dP2 = -[P2 A + A'P2 - Q_tilde + (P2 B - S_tilde') Theta] ds
// dP3 = -[A'P3 + (P2 B - S_tilde') phi + P2 b] ds
// dP4 = -[A'P4 + C'P1 sigma + (C'P1 D + P1 B - S') phi + P1 b] ds
Blocks rep_step(const Coefficients& p, int k_left, const Matrix& Th_l, const Matrix& Th_r,
                const Vector& ph_l, const Vector& ph_r, const Blocks& right) {
  double t_l = p.grid.nodes[k_left];
  double t_r = p.grid.nodes[k_left + 1];
  double h = t_r - t_l;
  auto drift = [&](double s, const Blocks& y) -> Blocks {
    double w = (s - t_l) / h;
    Matrix Th = lerp(Th_l, Th_r, w);
    Vector ph = lerp(ph_l, ph_r, w);
    Matrix A = sample(p.grid, p.A, s), C = sample(p.grid, p.C, s);
    Matrix B = sample(p.grid, p.B, s), D = sample(p.grid, p.D, s);
    Matrix Q = sample(p.grid, p.Q, s), Qt = sample(p.grid, p.Q_tilde, s);
    Matrix S = sample(p.grid, p.S, s), St = sample(p.grid, p.S_tilde, s);
    Vector bb = sample(p.grid, p.b, s), sg = sample(p.grid, p.sigma, s);
    Matrix At = A.transpose(), Ct = C.transpose();
    Blocks d;
    d.P1 = -(y.P1 * A + At * y.P1 + Ct * y.P1 * C +
             (y.P1 * B + Ct * y.P1 * D - S.transpose()) * Th - Q);
    d.P2 = -(y.P2 * A + At * y.P2 - Qt + (y.P2 * B - St.transpose()) * Th);
    d.P3 = -(At * y.P3 + (y.P2 * B - St.transpose()) * ph + y.P2 * bb);
    d.P4 = -(At * y.P4 + Ct * (y.P1 * sg) +
             (Ct * (y.P1 * D) + y.P1 * B - S.transpose()) * ph + y.P1 * bb);
    return d;
  };
  return rk4_blocks_back(t_r, h, right, drift);
}

// ---------- strategy step ----------
// With A_th = A + B Theta, C_th = C + D Theta:
// dP1 = -[P1 A_th + A_th'P1 + C_th'P1 C_th - (Q + Th'S + S'Th + Th'R Th)] ds
// dP2 = -[P2 A_th + A_th'P2 - (Q_tilde + Th'S_tilde + S_tilde'Th + Th'R_tilde Th)] ds
// dP3 = -[A_th'P3 + P2 b + (P2 B - S_tilde' - Th'R_tilde) phi] ds
// dP4 = -[A_th'P4 + C_th'P1 (D phi + sigma) + P1 (B phi + b) - (S' + Th'R) phi] ds
// The matrix blocks are re-symmetrized after the step; the dropped skew
// part is reported through *correction and must be round-off sized.
Blocks strategy_step(const Coefficients& p, int k_left, const Matrix& Th_l, const Matrix& Th_r,
                     const Vector& ph_l, const Vector& ph_r, const Blocks& right,
                     double* correction) {
  double t_l = p.grid.nodes[k_left];
  double t_r = p.grid.nodes[k_left + 1];
  double h = t_r - t_l;
  auto drift = [&](double s, const Blocks& y) -> Blocks {
    double w = (s - t_l) / h;
    Matrix Th = lerp(Th_l, Th_r, w);
    Vector ph = lerp(ph_l, ph_r, w);
    Matrix A = sample(p.grid, p.A, s), C = sample(p.grid, p.C, s);
    Matrix B = sample(p.grid, p.B, s), D = sample(p.grid, p.D, s);
    Matrix Q = sample(p.grid, p.Q, s), Qt = sample(p.grid, p.Q_tilde, s);
    Matrix S = sample(p.grid, p.S, s), St = sample(p.grid, p.S_tilde, s);
    Matrix R = sample(p.grid, p.R, s), Rt = sample(p.grid, p.R_tilde, s);
    Vector bb = sample(p.grid, p.b, s), sg = sample(p.grid, p.sigma, s);
    Matrix Ath = A + B * Th, Cth = C + D * Th;
    Matrix Atht = Ath.transpose(), Ctht = Cth.transpose(), Tht = Th.transpose();
    Blocks d;
    d.P1 = -(y.P1 * Ath + Atht * y.P1 + Ctht * y.P1 * Cth -
             (Q + Tht * S + S.transpose() * Th + Tht * R * Th));
    d.P2 = -(y.P2 * Ath + Atht * y.P2 -
             (Qt + Tht * St + St.transpose() * Th + Tht * Rt * Th));
    d.P3 = -(Atht * y.P3 + y.P2 * bb + (y.P2 * B - St.transpose() - Tht * Rt) * ph);
    d.P4 = -(Atht * y.P4 + Ctht * (y.P1 * (D * ph + sg)) + y.P1 * (B * ph + bb) -
             (S.transpose() + Tht * R) * ph);
    return d;
  };
  Blocks out = rk4_blocks_back(t_r, h, right, drift);
  double corr = std::max(resym(out.P1), resym(out.P2));
  double scale = 1.0 + std::max(out.P1.cwiseAbs().maxCoeff(), out.P2.cwiseAbs().maxCoeff());
  if (corr > 1e-6 * scale)
    throw SolverError("strategy kernel lost symmetry beyond round-off", k_left);
  if (correction) *correction = std::max(*correction, corr);
  return out;
}

// ---------- gain/affine algebraic system at a node ----------
// [R_agg - D'P1 D] Theta = B'(P1 + P2) + D'P1 C - S_agg
// [R_agg - D'P1 D] phi   = B'(P3 + P4) + D'(P1 sigma + L4),  L4 = 0.
// The same map characterizes both the representation and the strategy
// gains, fed with the respective kernel blocks.
GainSystem gain_system(const Coefficients& p, int k, const Blocks& y) {
  const Matrix& B = p.B[k];
  const Matrix& D = p.D[k];
  Matrix R_agg = p.R[k] + p.R_tilde[k];
  Matrix S_agg = p.S[k] + p.S_tilde[k];
  GainSystem gs;
  gs.Mso = R_agg - D.transpose() * y.P1 * D;
  gs.Wg = B.transpose() * (y.P1 + y.P2) + D.transpose() * (y.P1 * p.C[k]) - S_agg;
  gs.Wa = B.transpose() * (y.P3 + y.P4) + D.transpose() * (y.P1 * p.sigma[k]);
  return gs;
}

}  // namespace detail

namespace {

using detail::strategy_step;

// ---------- open-control step ----------
// dP1 = -[P1 A + A'P1 + C'P1 C - Q] ds
// dP2 = -[P2 A + A'P2 - Q_tilde] ds
// dP3 = -[A'P3 + P2 b + (P2 B - S_tilde') u] ds
// dP4 = -[A'P4 + C'P1 sigma + P1 b + (C'P1 D + P1 B - S') u] ds
Blocks open_step(const Coefficients& p, int k_left, const Vector& u_l, const Vector& u_r,
                 const Blocks& right) {
  double t_l = p.grid.nodes[k_left];
  double t_r = p.grid.nodes[k_left + 1];
  double h = t_r - t_l;
  auto drift = [&](double s, const Blocks& y) -> Blocks {
    double w = (s - t_l) / h;
    Vector u = lerp(u_l, u_r, w);
    Matrix A = sample(p.grid, p.A, s), C = sample(p.grid, p.C, s);
    Matrix B = sample(p.grid, p.B, s), D = sample(p.grid, p.D, s);
    Matrix Q = sample(p.grid, p.Q, s), Qt = sample(p.grid, p.Q_tilde, s);
    Matrix S = sample(p.grid, p.S, s), St = sample(p.grid, p.S_tilde, s);
    Vector bb = sample(p.grid, p.b, s), sg = sample(p.grid, p.sigma, s);
    Matrix At = A.transpose(), Ct = C.transpose();
    Blocks d;
    d.P1 = -(y.P1 * A + At * y.P1 + Ct * y.P1 * C - Q);
    d.P2 = -(y.P2 * A + At * y.P2 - Qt);
    d.P3 = -(At * y.P3 + y.P2 * bb + (y.P2 * B - St.transpose()) * u);
    d.P4 = -(At * y.P4 + Ct * (y.P1 * sg) + y.P1 * bb +
             (Ct * (y.P1 * D) + y.P1 * B - S.transpose()) * u);
    return d;
  };
  return rk4_blocks_back(t_r, h, right, drift);
}

// ---------- combined spiked-family step ----------
// Control u = Theta1 X_realized + Theta2 X_base + phi; Sg = Theta1 + Theta2.
// dP1 = -[P1 (A + B Sg) + (A + B Th1)'P1 + (C + D Th1)'P1 (C + D Sg)
//         - (Q + Th1'S + S'Sg + Th1'R Sg)] ds
// dP2 = -[P2 (A + B Sg) + (A + B Th1)'P2 - (Q_t + Th1'S_t + S_t'Sg + Th1'R_t Sg)] ds
// dP3 = -[(A + B Th1)'P3 + P2 (B phi + b) - (S_t' + Th1'R_t) phi] ds
// dP4 = -[(A + B Th1)'P4 + (C + D Th1)'P1 (D phi + sigma) + P1 (B phi + b)
//         - (S' + Th1'R) phi] ds
Blocks combined_step(const Coefficients& p, int k_left, const Matrix& T1_l, const Matrix& T1_r,
                     const Matrix& T2_l, const Matrix& T2_r, const Vector& ph_l,
                     const Vector& ph_r, const Blocks& right) {
  double t_l = p.grid.nodes[k_left];
  double t_r = p.grid.nodes[k_left + 1];
  double h = t_r - t_l;
  auto drift = [&](double s, const Blocks& y) -> Blocks {
    double w = (s - t_l) / h;
    Matrix T1 = lerp(T1_l, T1_r, w);
    Matrix T2 = lerp(T2_l, T2_r, w);
    Vector ph = lerp(ph_l, ph_r, w);
    Matrix Sg = T1 + T2;
    Matrix A = sample(p.grid, p.A, s), C = sample(p.grid, p.C, s);
    Matrix B = sample(p.grid, p.B, s), D = sample(p.grid, p.D, s);
    Matrix Q = sample(p.grid, p.Q, s), Qt = sample(p.grid, p.Q_tilde, s);
    Matrix S = sample(p.grid, p.S, s), St = sample(p.grid, p.S_tilde, s);
    Matrix R = sample(p.grid, p.R, s), Rt = sample(p.grid, p.R_tilde, s);
    Vector bb = sample(p.grid, p.b, s), sg = sample(p.grid, p.sigma, s);
    Matrix A_all = A + B * Sg, C_all = C + D * Sg;
    Matrix A1t = (A + B * T1).transpose(), C1t = (C + D * T1).transpose();
    Matrix T1t = T1.transpose();
    Blocks d;
    d.P1 = -(y.P1 * A_all + A1t * y.P1 + C1t * y.P1 * C_all -
             (Q + T1t * S + S.transpose() * Sg + T1t * R * Sg));
    d.P2 = -(y.P2 * A_all + A1t * y.P2 -
             (Qt + T1t * St + St.transpose() * Sg + T1t * Rt * Sg));
    d.P3 = -(A1t * y.P3 + y.P2 * (B * ph + bb) - (St.transpose() + T1t * Rt) * ph);
    d.P4 = -(A1t * y.P4 + C1t * (y.P1 * (D * ph + sg)) + y.P1 * (B * ph + bb) -
             (S.transpose() + T1t * R) * ph);
    return d;
  };
  return rk4_blocks_back(t_r, h, right, drift);
}

}  // namespace

std::vector<Vector> integrate_backward(const TimeGrid& grid, const Vector& terminal,
                                       const std::function<Vector(double, const Vector&)>& rhs) {
  std::vector<Vector> path(grid.N + 1);
  path[grid.N] = terminal;
  for (int k = grid.N - 1; k >= 0; --k) {
    double t_r = grid.nodes[k + 1];
    double h = t_r - grid.nodes[k];
    const Vector& y = path[k + 1];
    Vector k1 = rhs(t_r, y);
    Vector k2 = rhs(t_r - 0.5 * h, y - 0.5 * h * k1);
    Vector k3 = rhs(t_r - 0.5 * h, y - 0.5 * h * k2);
    Vector k4 = rhs(t_r - h, y - h * k3);
    path[k] = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!path[k].allFinite() || path[k].cwiseAbs().maxCoeff() > 1e12)
      throw SolverError("backward integration diverged", k);
  }
  return path;
}

KernelSolution solve_open_kernel(const Coefficients& prob, const VectorPath& u) {
  if (static_cast<int>(u.size()) != prob.grid.N + 1)
    throw ProblemError("solve_open_kernel: control path must have one value per node");
  KernelSolution sol = init_solution(prob, KernelVariant::open);
  Blocks y = detail::terminal_blocks(prob);
  store_node(sol, prob.grid.N, y);
  for (int k = prob.grid.N - 1; k >= 0; --k) {
    y = open_step(prob, k, u[k], u[k + 1], y);
    check_blocks(y, k);
    store_node(sol, k, y);
  }
  return sol;
}

KernelSolution solve_rep_kernel(const Coefficients& prob, const StrategyPair& strategy) {
  KernelSolution sol = init_solution(prob, KernelVariant::closed_rep);
  Blocks y = detail::terminal_blocks(prob);
  store_node(sol, prob.grid.N, y);
  for (int k = prob.grid.N - 1; k >= 0; --k) {
    y = detail::rep_step(prob, k, strategy.Theta[k], strategy.Theta[k + 1], strategy.phi[k],
                         strategy.phi[k + 1], y);
    check_blocks(y, k);
    store_node(sol, k, y);
  }
  return sol;
}

KernelSolution solve_strategy_kernel(const Coefficients& prob, const StrategyPair& strategy) {
  KernelSolution sol = init_solution(prob, KernelVariant::closed_strategy);
  Blocks y = detail::terminal_blocks(prob);
  store_node(sol, prob.grid.N, y);
  for (int k = prob.grid.N - 1; k >= 0; --k) {
    y = strategy_step(prob, k, strategy.Theta[k], strategy.Theta[k + 1], strategy.phi[k],
                      strategy.phi[k + 1], y, &sol.symmetry_correction);
    check_blocks(y, k);
    store_node(sol, k, y);
  }
  return sol;
}

KernelSolution solve_combined_kernel(const Coefficients& prob, const FeedbackControl& control) {
  KernelSolution sol = init_solution(prob, KernelVariant::generic);
  Blocks y = detail::terminal_blocks(prob);
  store_node(sol, prob.grid.N, y);
  for (int k = prob.grid.N - 1; k >= 0; --k) {
    y = combined_step(prob, k, control.Theta1[k], control.Theta1[k + 1], control.Theta2[k],
                      control.Theta2[k + 1], control.phi[k], control.phi[k + 1], y);
    check_blocks(y, k);
    store_node(sol, k, y);
  }
  return sol;
}

KernelSolution solve_generic_kernel(const GenericBackwardSpec& spec, const TimeGrid& grid) {
  int n = spec.n;
  auto need = [&](const MatrixPath& p) { return static_cast<int>(p.size()) == grid.N + 1; };
  auto needv = [&](const VectorPath& p) { return static_cast<int>(p.size()) == grid.N + 1; };
  if (n < 1 || !need(spec.A1) || !need(spec.B1) || !need(spec.C1) || !need(spec.C2) ||
      !need(spec.C3) || !need(spec.C4) || !needv(spec.A2) || !needv(spec.B2) ||
      !needv(spec.C5) || !needv(spec.C6))
    throw ProblemError("solve_generic_kernel: coefficient paths must have one value per node");

  KernelSolution sol;
  sol.variant = KernelVariant::generic;
  sol.P1.resize(grid.N + 1);
  sol.P2.resize(grid.N + 1);
  sol.P3.resize(grid.N + 1);
  sol.P4.resize(grid.N + 1);
  sol.L3 = constant_path(Vector::Zero(n), grid.N);
  sol.L4 = constant_path(Vector::Zero(n), grid.N);

  Blocks y{spec.D1, spec.D2, Vector::Zero(n), spec.D3};
  store_node(sol, grid.N, y);
  auto drift = [&](double s, const Blocks& yy) -> Blocks {
    Matrix A1 = sample(grid, spec.A1, s), B1 = sample(grid, spec.B1, s);
    Matrix C1 = sample(grid, spec.C1, s), C2 = sample(grid, spec.C2, s);
    Matrix C3 = sample(grid, spec.C3, s), C4 = sample(grid, spec.C4, s);
    Vector A2 = sample(grid, spec.A2, s), B2 = sample(grid, spec.B2, s);
    Vector C5 = sample(grid, spec.C5, s), C6 = sample(grid, spec.C6, s);
    Blocks d;
    d.P1 = -(yy.P1 * A1 + C1 * yy.P1 + C2 * yy.P1 * B1 + C3);
    d.P2 = -(yy.P2 * A1 + C1 * yy.P2 + C4);
    d.P3 = -(C1 * yy.P3 + yy.P2 * A2 + C6);
    d.P4 = -(C1 * yy.P4 + C2 * (yy.P1 * B2) + yy.P1 * A2 + C5);
    return d;
  };
  for (int k = grid.N - 1; k >= 0; --k) {
    y = rk4_blocks_back(grid.nodes[k + 1], grid.nodes[k + 1] - grid.nodes[k], y, drift);
    check_blocks(y, k);
    store_node(sol, k, y);
  }
  return sol;
}

MatrixPath solve_second_order_kernel(const Coefficients& prob, const MatrixPath& Theta1) {
  if (static_cast<int>(Theta1.size()) != prob.grid.N + 1)
    throw ProblemError("solve_second_order_kernel: gain path must have one value per node");
  const TimeGrid& grid = prob.grid;
  MatrixPath P(grid.N + 1);
  P[grid.N] = -prob.G;
  for (int k = grid.N - 1; k >= 0; --k) {
    double t_l = grid.nodes[k], t_r = grid.nodes[k + 1];
    double h = t_r - t_l;
    auto drift = [&](double s, const Matrix& y) -> Matrix {
      double w = (s - t_l) / h;
      Matrix Th = Theta1[k] + w * (Theta1[k + 1] - Theta1[k]);
      Matrix A = sample(grid, prob.A, s), C = sample(grid, prob.C, s);
      Matrix B = sample(grid, prob.B, s), D = sample(grid, prob.D, s);
      Matrix Q = sample(grid, prob.Q, s), S = sample(grid, prob.S, s);
      Matrix R = sample(grid, prob.R, s);
      Matrix Ath = A + B * Th, Cth = C + D * Th, Tht = Th.transpose();
      return -(y * Ath + Ath.transpose() * y + Cth.transpose() * y * Cth -
               (Q + Tht * S + S.transpose() * Th + Tht * R * Th));
    };
    const Matrix& y = P[k + 1];
    Matrix k1 = drift(t_r, y);
    Matrix k2 = drift(t_r - 0.5 * h, y - 0.5 * h * k1);
    Matrix k3 = drift(t_r - 0.5 * h, y - 0.5 * h * k2);
    Matrix k4 = drift(t_r - h, y - h * k3);
    P[k] = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    resym(P[k]);
    if (!P[k].allFinite() || P[k].cwiseAbs().maxCoeff() > 1e12)
      throw SolverError("second-order kernel diverged", k);
  }
  return P;
}

Vector AdjointPair::M(double s, const Vector& x, const Vector& x_mean) const {
  const TimeGrid& grid = prob->grid;
  return sample(grid, kernel->P1, s) * x + sample(grid, kernel->P2, s) * x_mean +
         sample(grid, kernel->P3, s) + sample(grid, kernel->P4, s);
}

Vector AdjointPair::M_diag(double s, const Vector& x) const {
  const TimeGrid& grid = prob->grid;
  return (sample(grid, kernel->P1, s) + sample(grid, kernel->P2, s)) * x +
         sample(grid, kernel->P3, s) + sample(grid, kernel->P4, s);
}

Vector AdjointPair::N(double s, const Vector& x, const Vector& u) const {
  const TimeGrid& grid = prob->grid;
  return sample(grid, kernel->P1, s) *
             (sample(grid, prob->C, s) * x + sample(grid, prob->D, s) * u +
              sample(grid, prob->sigma, s)) +
         sample(grid, kernel->L4, s);
}

std::vector<double> decoupling_residual(const KernelSolution& kernel, const Coefficients& prob,
                                        const VectorPath& u, double t) {
  const TimeGrid& grid = prob.grid;
  int k0 = node_at(grid, t);
  VectorPath x = mean_trajectory(prob, control_from_open(prob, u), t, prob.x0);

  Aggregates agg = aggregates(prob);
  int count = grid.N - k0 + 1;
  VectorPath M(count);
  for (int k = k0; k <= grid.N; ++k)
    M[k - k0] = (kernel.P1[k] + kernel.P2[k]) * x[k] + kernel.P3[k] + kernel.P4[k];

  if (count == 1)
    return {(M[0] + agg.G * x[grid.N] + prob.g).norm()};

  std::vector<double> res(count);
  double h = grid.h;
  for (int k = k0; k <= grid.N; ++k) {
    int i = k - k0;
    Vector dM;
    if (i == 0)
      dM = count >= 3 ? Vector((-3.0 * M[0] + 4.0 * M[1] - M[2]) / (2.0 * h))
                      : Vector((M[1] - M[0]) / h);
    else if (i == count - 1)
      dM = count >= 3 ? Vector((3.0 * M[i] - 4.0 * M[i - 1] + M[i - 2]) / (2.0 * h))
                      : Vector((M[i] - M[i - 1]) / h);
    else
      dM = (M[i + 1] - M[i - 1]) / (2.0 * h);
    Vector Nk = kernel.P1[k] * (prob.C[k] * x[k] + prob.D[k] * u[k] + prob.sigma[k]) + kernel.L4[k];
    Vector drift = prob.A[k].transpose() * M[i] + prob.C[k].transpose() * Nk - agg.Q[k] * x[k] -
                   agg.S[k].transpose() * u[k];
    res[i] = (dM + drift).norm();
  }
  return res;
}

VectorPath mean_trajectory(const Coefficients& prob, const FeedbackControl& control, double t0,
                           const Vector& xi) {
  const TimeGrid& grid = prob.grid;
  int k0 = node_at(grid, t0);
  VectorPath x(grid.N + 1, xi);
  auto drift = [&](double s, const Vector& y) -> Vector {
    Matrix Th = sample(grid, control.Theta1, s) + sample(grid, control.Theta2, s);
    Vector u = Th * y + sample(grid, control.phi, s);
    return sample(grid, prob.A, s) * y + sample(grid, prob.B, s) * u + sample(grid, prob.b, s);
  };
  for (int k = k0; k < grid.N; ++k) {
    double t_l = grid.nodes[k];
    double h = grid.nodes[k + 1] - t_l;
    const Vector& y = x[k];
    Vector k1 = drift(t_l, y);
    Vector k2 = drift(t_l + 0.5 * h, y + 0.5 * h * k1);
    Vector k3 = drift(t_l + 0.5 * h, y + 0.5 * h * k2);
    Vector k4 = drift(t_l + h, y + h * k3);
    x[k + 1] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x[k + 1].allFinite() || x[k + 1].cwiseAbs().maxCoeff() > 1e12)
      throw SolverError("mean trajectory diverged", k + 1);
  }
  return x;
}

}  // namespace tilq
