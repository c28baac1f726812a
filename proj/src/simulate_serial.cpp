// Serial reference simulator: one plain loop over paths, no worker pool,
// no shared-slot bookkeeping. Used by the tests to pin the parallel
// simulator down bit-for-bit and by the benchmark tool as the baseline.
#include "tilq/mc.hpp"
#include "tilq/rng.hpp"

#include <cmath>

namespace tilq {

SimulationEnsemble simulate_serial(const Coefficients& prob, const FeedbackControl& control,
                                   const Vector& xi, double t0, std::uint64_t seed,
                                   std::uint64_t stream, int n_paths, const SpikeSpec* spike) {
  const TimeGrid& grid = prob.grid;
  const int k0 = node_at(grid, t0);
  if (xi.size() != prob.n) throw ProblemError("simulate: start state has wrong dimension");
  if (n_paths < 1) throw ProblemError("simulate: need at least one path");

  int ws = -1, we = -1;
  if (spike) {
    ws = node_at(grid, spike->t);
    we = ws + spike->steps;
    if (spike->steps < 1 || ws < k0 || we > grid.N)
      throw ProblemError("simulate: spike window must lie on the grid inside [t0, T]");
    if (spike->v.size() != prob.m)
      throw ProblemError("simulate: spike direction has wrong dimension");
  }

  SimulationEnsemble ens;
  ens.k0 = k0;
  ens.n_paths = n_paths;
  ens.X.assign(n_paths, VectorPath(grid.N + 1));
  if (spike) ens.X0.assign(n_paths, VectorPath(grid.N + 1));

  const double h = grid.h;
  const double sqrt_h = std::sqrt(h);

  for (int p = 0; p < n_paths; ++p) {
    CounterRng rng(seed, stream, static_cast<std::uint64_t>(p));
    for (int k = 0; k <= k0; ++k) ens.X[p][k] = xi;
    Vector x = xi;
    Vector z;
    if (spike) {
      for (int k = 0; k <= grid.N; ++k) ens.X0[p][k] = Vector::Zero(prob.n);
      z = Vector::Zero(prob.n);
    }
    for (int k = k0; k < grid.N; ++k) {
      double dW = sqrt_h * rng.normal(static_cast<std::uint64_t>(k));
      Vector u = (control.Theta1[k] + control.Theta2[k]) * x + control.phi[k];
      Vector x_next = x + h * (prob.A[k] * x + prob.B[k] * u + prob.b[k]) +
                      dW * (prob.C[k] * x + prob.D[k] * u + prob.sigma[k]);
      if (spike) {
        Vector uz = control.Theta1[k] * z;
        if (k >= ws && k < we) uz += spike->v;
        z = z + h * (prob.A[k] * z + prob.B[k] * uz) + dW * (prob.C[k] * z + prob.D[k] * uz);
        ens.X0[p][k + 1] = z;
      }
      x = x_next;
      ens.X[p][k + 1] = x;
    }
  }
  return ens;
}

}  // namespace tilq
