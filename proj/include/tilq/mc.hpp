// Monte Carlo verification layer: reproducible Euler-Maruyama ensembles
// (base state plus spike response under common random numbers), nested
// estimation of costs containing conditional-mean terms, spike difference
// quotients, and the expansion of a spiked cost into first-order, cross
// and second-order parts.
#pragma once

#include "tilq/kernel_ode.hpp"
#include "tilq/problem.hpp"

#include <cstdint>
#include <vector>

namespace tilq {

struct McParams {
  std::uint64_t seed = 0x5eed5eedull;
  int outer = 4096;  ///< pathwise ensemble size
  int inner = 256;   ///< conditional-mean ensemble size
};

enum class PerturbMode { open_loop, closed_loop };

/// Spike probe: bump direction v applied on [t, t + eps) for each
/// eps = steps * h. closed_loop places the strategy where the spike
/// re-enters feedback through the perturbed state; open_loop probes the
/// control as a realized process, the spike never re-entering.
struct PerturbationProbe {
  double t = 0.0;
  Vector v;
  std::vector<int> eps_steps;
  PerturbMode mode = PerturbMode::open_loop;
};

/// Single spike instance consumed by the simulators.
struct SpikeSpec {
  Vector v;
  double t = 0.0;
  int steps = 0;
};

/// Base ensemble plus (optionally) the spike response driven by the same
/// Brownian increments. Paths hold xi at nodes up to k0. X0[p][k] is zero
/// through the spike start; the perturbed state is X[p][k] + X0[p][k].
struct SimulationEnsemble {
  int k0 = 0;
  int n_paths = 0;
  std::vector<VectorPath> X;
  std::vector<VectorPath> X0;  ///< empty when no spike was requested
};

/// Euler-Maruyama ensemble under the affine control, one scalar Brownian
/// increment per step, coefficients frozen at the left node. Every draw is
/// a pure function of (seed, stream, path, step), so the result is
/// bit-identical whatever the thread count; paths run under OpenMP.
SimulationEnsemble simulate(const Coefficients& prob, const FeedbackControl& control,
                            const Vector& xi, double t0, std::uint64_t seed, std::uint64_t stream,
                            int n_paths, const SpikeSpec* spike = nullptr);

/// Reference implementation of the same contract in plain serial loops,
/// kept to pin the parallel simulator down bit-for-bit.
SimulationEnsemble simulate_serial(const Coefficients& prob, const FeedbackControl& control,
                                   const Vector& xi, double t0, std::uint64_t seed,
                                   std::uint64_t stream, int n_paths,
                                   const SpikeSpec* spike = nullptr);

/// Worker cap: TILQ_THREADS when set (clamped to at least 1), otherwise
/// the OpenMP default; 1 without OpenMP.
int worker_count();

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;  ///< outer-ensemble standard error of the pathwise part
  int outer = 0;
  int inner = 0;
};

/// Nested estimator of the time-t cost under an affine control started at
/// xi: pathwise terms averaged over the outer ensemble, conditional-mean
/// (tilde) terms from one shared inner ensemble with small-sample
/// covariance bias corrections, trapezoid rule in time.
CostEstimate estimate_cost(const Coefficients& prob, const FeedbackControl& control, double t,
                           const Vector& xi, const McParams& params);

struct QuotientPoint {
  double eps = 0.0;
  double quotient = 0.0;
  double std_error = 0.0;  ///< outer spread plus batched inner-mean fluctuation, over eps
};

/// Difference quotients [J(spiked) - J(base)] / eps for every eps in the
/// probe, base and spiked ensembles driven by common random numbers. The
/// start state defaults to the mean state at probe.t under the strategy.
std::vector<QuotientPoint> perturbation_quotient(const Coefficients& prob,
                                                 const StrategyPair& strategy,
                                                 const PerturbationProbe& probe,
                                                 const McParams& params,
                                                 const Vector* xi = nullptr);

/// Deterministic node-wise weights of the expansion integrands. The
/// first-order term integrates <Wx X + w0 + (1/2) R_agg v, v> over the
/// spike window; the cross term integrates <Wcross v, X0>.
struct VariationIntegrands {
  MatrixPath Wx;      // m x n
  VectorPath w0;      // m
  MatrixPath R_agg;   // m x m
  MatrixPath Wcross;  // n x m
};

/// Builds the integrand weights from the kernel system solved at the
/// control's own (Theta1, Theta2, phi).
VariationIntegrands variation_integrands(const Coefficients& prob, const FeedbackControl& control,
                                         const KernelSolution& combined);

struct VariationRow {
  double eps = 0.0;
  double direct = 0.0;         ///< MC estimate of J(spiked) - J(base)
  double direct_se = 0.0;      ///< outer spread plus batched inner-mean fluctuation
  double first_order = 0.0;    ///< kernel-weighted spike integral (MC over the window)
  double cross = 0.0;          ///< MC cross term
  double second_mc = 0.0;      ///< direct - first_order - cross
  double second_se = 0.0;      ///< per-path second-order spread plus inner fluctuation
  double second_kernel = 0.0;  ///< -(eps/2) v' D(t)' Pbar1(t) D(t) v
  double recon_error = 0.0;    ///< |direct - (first_order + cross + second_kernel)|
};

/// Splits the spiked-cost difference into its expansion parts for every
/// eps in the probe. The first-order and cross terms use the combined
/// kernel system at the given control; the second-order kernel prediction
/// prices the spike through the quadratic response kernel at probe.t.
std::vector<VariationRow> decompose_variation(const Coefficients& prob,
                                              const FeedbackControl& control,
                                              const PerturbationProbe& probe,
                                              const McParams& params, const Vector* xi = nullptr);

}  // namespace tilq
