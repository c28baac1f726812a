#include "tilq/mc.hpp"
#include "tilq/rng.hpp"

#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tilq {

int worker_count() {
#ifdef _OPENMP
  if (const char* env = std::getenv("TILQ_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

struct SpikeWindow {
  int start = -1;
  int stop = -1;  // active for start <= k < stop
};

SpikeWindow resolve_spike(const Coefficients& prob, int k0, const SpikeSpec* spike) {
  SpikeWindow w;
  if (!spike) return w;
  w.start = node_at(prob.grid, spike->t);
  w.stop = w.start + spike->steps;
  if (spike->steps < 1 || w.start < k0 || w.stop > prob.grid.N)
    throw ProblemError("simulate: spike window must lie on the grid inside [t0, T]");
  if (spike->v.size() != prob.m)
    throw ProblemError("simulate: spike direction has wrong dimension");
  return w;
}

}  // namespace

SimulationEnsemble simulate(const Coefficients& prob, const FeedbackControl& control,
                            const Vector& xi, double t0, std::uint64_t seed, std::uint64_t stream,
                            int n_paths, const SpikeSpec* spike) {
  const TimeGrid& grid = prob.grid;
  const int k0 = node_at(grid, t0);
  if (xi.size() != prob.n) throw ProblemError("simulate: start state has wrong dimension");
  if (n_paths < 1) throw ProblemError("simulate: need at least one path");
  const SpikeWindow win = resolve_spike(prob, k0, spike);

  SimulationEnsemble ens;
  ens.k0 = k0;
  ens.n_paths = n_paths;
  ens.X.assign(n_paths, VectorPath(grid.N + 1));
  if (spike) ens.X0.assign(n_paths, VectorPath(grid.N + 1));

  const double h = grid.h;
  const double sqrt_h = std::sqrt(h);

  // Every path writes only its own preallocated slot and draws from its
  // own counter stream, so the schedule cannot change the result.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
#endif
  for (int p = 0; p < n_paths; ++p) {
    CounterRng rng(seed, stream, static_cast<std::uint64_t>(p));
    VectorPath& X = ens.X[p];
    for (int k = 0; k <= k0; ++k) X[k] = xi;
    Vector x = xi;
    Vector z;
    if (spike) {
      VectorPath& Z = ens.X0[p];
      for (int k = 0; k <= grid.N; ++k) Z[k] = Vector::Zero(prob.n);
      z = Vector::Zero(prob.n);
    }
    for (int k = k0; k < grid.N; ++k) {
      double dW = sqrt_h * rng.normal(static_cast<std::uint64_t>(k));
      Vector u = (control.Theta1[k] + control.Theta2[k]) * x + control.phi[k];
      Vector x_next = x + h * (prob.A[k] * x + prob.B[k] * u + prob.b[k]) +
                      dW * (prob.C[k] * x + prob.D[k] * u + prob.sigma[k]);
      if (spike) {
        Vector uz = control.Theta1[k] * z;
        if (k >= win.start && k < win.stop) uz += spike->v;
        z = z + h * (prob.A[k] * z + prob.B[k] * uz) + dW * (prob.C[k] * z + prob.D[k] * uz);
        ens.X0[p][k + 1] = z;
      }
      x = x_next;
      X[k + 1] = x;
    }
  }
  return ens;
}

}  // namespace tilq
