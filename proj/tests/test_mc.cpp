#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_support.hpp"
#include "tilq/mc.hpp"
#include "tilq/rng.hpp"
#include "tilq/strategy_solver.hpp"

#include <cmath>
#include <cstdlib>

using namespace tilq;
using namespace tilq::testing;

namespace {

bool paths_identical(const std::vector<VectorPath>& a, const std::vector<VectorPath>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (a[p].size() != b[p].size()) return false;
    for (std::size_t k = 0; k < a[p].size(); ++k)
      if ((a[p][k] - b[p][k]).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

FeedbackControl mild_feedback(const Coefficients& prob) {
  FeedbackControl fc = zero_control(prob);
  fc.Theta1 = constant_path(Matrix::Constant(prob.m, prob.n, -0.2), prob.grid.N);
  fc.phi = constant_path(Vector::Constant(prob.m, 0.1), prob.grid.N);
  return fc;
}

}  // namespace

TEST_CASE("parallel and serial simulators agree bit for bit") {
  Coefficients prob = conditional_terminal_suite(0x6001u, 64);
  FeedbackControl fc = mild_feedback(prob);
  SpikeSpec spike{Vector::Constant(2, 0.7), prob.grid.nodes[16], 4};

  SUBCASE("with the ambient thread count") {
    SimulationEnsemble par = simulate(prob, fc, prob.x0, 0.0, 99, 0, 37, &spike);
    SimulationEnsemble ser = simulate_serial(prob, fc, prob.x0, 0.0, 99, 0, 37, &spike);
    CHECK(paths_identical(par.X, ser.X));
    CHECK(paths_identical(par.X0, ser.X0));
  }
  SUBCASE("with a forced worker cap") {
    setenv("TILQ_THREADS", "3", 1);
    SimulationEnsemble capped = simulate(prob, fc, prob.x0, 0.0, 99, 0, 37, &spike);
    unsetenv("TILQ_THREADS");
    SimulationEnsemble ser = simulate_serial(prob, fc, prob.x0, 0.0, 99, 0, 37, &spike);
    CHECK(paths_identical(capped.X, ser.X));
    CHECK(paths_identical(capped.X0, ser.X0));
  }
}

TEST_CASE("every draw is a pure function of seed, stream, path and step") {
  // Replay one path of the ensemble by hand straight from the counter
  // stream; any hidden state in the simulator would break the equality.
  Coefficients prob = conditional_terminal_suite(0x6002u, 32);
  FeedbackControl fc = mild_feedback(prob);
  const std::uint64_t seed = 4242, stream = 5;
  const int p = 3;
  SimulationEnsemble ens = simulate(prob, fc, prob.x0, 0.0, seed, stream, 8);

  CounterRng rng(seed, stream, p);
  const double sqrt_h = std::sqrt(prob.grid.h);
  Vector x = prob.x0;
  for (int k = 0; k < 32; ++k) {
    double dW = sqrt_h * rng.normal(static_cast<std::uint64_t>(k));
    Vector u = (fc.Theta1[k] + fc.Theta2[k]) * x + fc.phi[k];
    x = Vector(x + prob.grid.h * (prob.A[k] * x + prob.B[k] * u + prob.b[k]) +
               dW * (prob.C[k] * x + prob.D[k] * u + prob.sigma[k]));
    CHECK((ens.X[p][k + 1] - x).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("distinct streams decorrelate, same stream repeats") {
  Coefficients prob = time_consistent_suite(0x6003u, 16);
  FeedbackControl fc = zero_control(prob);
  SimulationEnsemble s0 = simulate(prob, fc, prob.x0, 0.0, 7, 0, 4);
  SimulationEnsemble s0_again = simulate(prob, fc, prob.x0, 0.0, 7, 0, 4);
  SimulationEnsemble s1 = simulate(prob, fc, prob.x0, 0.0, 7, 1, 4);
  CHECK(paths_identical(s0.X, s0_again.X));
  CHECK_FALSE(paths_identical(s0.X, s1.X));
}

TEST_CASE("zero spike direction leaves the response identically zero") {
  // Common random numbers mean the base and spiked ensembles share every
  // increment, so a zero bump must produce a bitwise-zero response, not a
  // statistically small one.
  Coefficients prob = conditional_terminal_suite(0x6004u, 32);
  FeedbackControl fc = mild_feedback(prob);
  SpikeSpec spike{Vector::Zero(2), prob.grid.nodes[8], 4};
  SimulationEnsemble ens = simulate(prob, fc, prob.x0, 0.0, 11, 0, 16, &spike);
  for (int p = 0; p < 16; ++p)
    for (int k = 0; k <= 32; ++k) CHECK(ens.X0[p][k].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("spike placement distinguishes re-entering and frozen feedback") {
  // The placement question needs a nonzero gain to bite (an equilibrium
  // with a vanishing gain probes identically either way), so wire in a
  // plain stabilizing feedback by hand.
  Coefficients prob = mean_variance_instance(64);
  MatrixPath Theta = constant_path(Matrix::Constant(1, 1, -0.5), 64);
  VectorPath phi = constant_path(Vector::Constant(1, 0.2), 64);
  SpikeSpec spike{Vector::Constant(1, 1.0), prob.grid.nodes[8], 4};

  FeedbackControl closed = zero_control(prob);
  closed.Theta1 = Theta;
  closed.phi = phi;
  FeedbackControl open = zero_control(prob);
  open.Theta2 = Theta;
  open.phi = phi;

  SimulationEnsemble ec = simulate(prob, closed, prob.x0, 0.0, 5, 0, 4, &spike);
  SimulationEnsemble eo = simulate(prob, open, prob.x0, 0.0, 5, 0, 4, &spike);
  // Base paths see the same total gain either way.
  CHECK(paths_identical(ec.X, eo.X));
  // The response does not: only Theta1 couples the spike back into the
  // control.
  CHECK_FALSE(paths_identical(ec.X0, eo.X0));
  // Inside [start, stop) both responses move; before the spike both are 0.
  CHECK(ec.X0[0][8].cwiseAbs().maxCoeff() == 0.0);
  CHECK(ec.X0[0][12].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("simulator rejects malformed spike windows") {
  Coefficients prob = mean_variance_instance(32);
  FeedbackControl fc = zero_control(prob);
  SpikeSpec off_grid{Vector::Constant(1, 1.0), 0.013, 2};
  CHECK_THROWS_AS(simulate(prob, fc, prob.x0, 0.0, 1, 0, 2, &off_grid), ProblemError);
  SpikeSpec too_long{Vector::Constant(1, 1.0), prob.grid.nodes[30], 5};
  CHECK_THROWS_AS(simulate(prob, fc, prob.x0, 0.0, 1, 0, 2, &too_long), ProblemError);
  SpikeSpec bad_dim{Vector::Constant(2, 1.0), prob.grid.nodes[4], 2};
  CHECK_THROWS_AS(simulate(prob, fc, prob.x0, 0.0, 1, 0, 2, &bad_dim), ProblemError);
}

TEST_CASE("cost estimate reduces to the trapezoid rule on deterministic dynamics") {
  // With no diffusion every path is the same Euler trajectory and the
  // conditional-mean corrections vanish, so the estimator must reproduce
  // plain deterministic quadrature to round-off.
  Coefficients prob = time_consistent_suite(0x6005u, 64);
  prob.C = constant_path(Matrix::Zero(2, 2), 64);
  prob.D = constant_path(Matrix::Zero(2, 2), 64);
  prob.sigma = constant_path(Vector::Zero(2), 64);
  prob.Q_tilde = constant_path(Matrix::Constant(2, 2, 0.2), 64);
  prob.R_tilde = constant_path(Matrix::Constant(2, 2, 0.1), 64);
  prob.G_tilde = Matrix::Constant(2, 2, -0.3);
  validate(prob);
  FeedbackControl fc = mild_feedback(prob);

  McParams mc;
  mc.outer = 8;
  mc.inner = 4;
  CostEstimate est = estimate_cost(prob, fc, 0.0, prob.x0, mc);
  // All paths coincide; the only spread left is round-off in the running
  // mean (n identical summands still round at every third addition).
  CHECK(est.std_error <= 1e-14 * (1.0 + std::abs(est.mean)));

  // Euler replay plus trapezoid weights, tilde terms collapsing to plain
  // quadratic forms of the deterministic state.
  const double h = prob.grid.h;
  Vector x = prob.x0;
  double acc = 0.0;
  double quad = 0.0;
  for (int k = 0; k <= 64; ++k) {
    Vector u = (fc.Theta1[k] + fc.Theta2[k]) * x + fc.phi[k];
    double f = x.dot(prob.Q[k] * x) + 2.0 * u.dot(prob.S[k] * x) + u.dot(prob.R[k] * u) +
               x.dot(prob.Q_tilde[k] * x) + 2.0 * u.dot(prob.S_tilde[k] * x) +
               u.dot(prob.R_tilde[k] * u);
    acc += ((k == 0 || k == 64) ? 0.5 * h : h) * f;
    if (k < 64) x = Vector(x + h * (prob.A[k] * x + prob.B[k] * u + prob.b[k]));
  }
  quad = 0.5 * (acc + x.dot((prob.G + prob.G_tilde) * x) + 2.0 * prob.g.dot(x));
  CHECK(est.mean == doctest::Approx(quad).epsilon(1e-12));
}

TEST_CASE("standard error follows the square-root law in the outer budget") {
  Coefficients prob = mean_variance_instance(64);
  FeedbackControl fc = mild_feedback(prob);
  McParams small;
  small.outer = 256;
  small.inner = 8;
  McParams big = small;
  big.outer = 256 * 16;
  double se_small = estimate_cost(prob, fc, 0.0, prob.x0, small).std_error;
  double se_big = estimate_cost(prob, fc, 0.0, prob.x0, big).std_error;
  CHECK(se_small > 0.0);
  double ratio = se_small / se_big;
  CHECK(ratio > 4.0 / 1.5);
  CHECK(ratio < 4.0 * 1.5);
}

TEST_CASE("pure conditional-variance costs stay nonnegative within noise") {
  // G = I and G_tilde = -I price exactly the conditional variance of the
  // terminal state, which is nonnegative; the nested estimator may dip
  // below zero only by its own standard error.
  Coefficients prob = make_zero_problem(1, 1, 1.0, 64);
  prob.x0 = Vector::Constant(1, 1.0);
  prob.A = constant_path(Matrix::Constant(1, 1, 0.3), 64);
  prob.C = constant_path(Matrix::Constant(1, 1, 0.4), 64);
  prob.sigma = constant_path(Vector::Constant(1, 0.2), 64);
  prob.G = Matrix::Identity(1, 1);
  prob.G_tilde = -Matrix::Identity(1, 1);
  validate(prob);
  McParams mc;
  mc.outer = 2048;
  mc.inner = 128;
  CostEstimate est = estimate_cost(prob, zero_control(prob), 0.0, prob.x0, mc);
  CHECK(est.mean >= -2.0 * est.std_error);
  CHECK(est.mean > 0.0);  // genuinely positive variance on this instance
}

TEST_CASE("difference quotients are deterministic in the full parameter set") {
  Coefficients prob = mean_variance_instance(64);
  StrategySynthesis syn = synthesize_strategy(prob);
  PerturbationProbe probe;
  probe.t = prob.grid.nodes[16];
  probe.v = Vector::Constant(1, 1.0);
  probe.eps_steps = {2, 4, 8};
  probe.mode = PerturbMode::closed_loop;
  McParams mc;
  mc.outer = 256;
  mc.inner = 32;

  auto q1 = perturbation_quotient(prob, syn.strategy, probe, mc);
  auto q2 = perturbation_quotient(prob, syn.strategy, probe, mc);
  REQUIRE(q1.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(q1[i].eps == doctest::Approx(probe.eps_steps[i] * prob.grid.h).epsilon(1e-15));
    CHECK(q1[i].quotient == q2[i].quotient);
    CHECK(q1[i].std_error == q2[i].std_error);
    CHECK(q1[i].std_error > 0.0);
  }
}

TEST_CASE("equilibrium quotients clear their uncertainty band") {
  Coefficients prob = mean_variance_instance();
  StrategySynthesis syn = synthesize_strategy(prob);
  PerturbationProbe probe;
  probe.t = 0.0;
  probe.v = Vector::Constant(1, -1.0);
  probe.eps_steps = {2, 4};
  probe.mode = PerturbMode::closed_loop;
  McParams mc;
  mc.outer = 1024;
  mc.inner = 64;
  for (const QuotientPoint& q : perturbation_quotient(prob, syn.strategy, probe, mc))
    CHECK(q.quotient >= -2.0 * q.std_error);
}

TEST_CASE("variation decomposition reconstructs the direct difference") {
  Coefficients prob = mean_variance_instance();
  StrategySynthesis syn = synthesize_strategy(prob);
  FeedbackControl control = zero_control(prob);
  control.Theta1 = syn.strategy.Theta;
  control.phi = syn.strategy.phi;

  PerturbationProbe probe;
  probe.t = prob.grid.nodes[64];
  probe.v = Vector::Constant(1, 1.0);
  probe.eps_steps = {2, 4, 8};
  probe.mode = PerturbMode::closed_loop;
  McParams mc;
  mc.outer = 2048;
  mc.inner = 128;

  auto rows = decompose_variation(prob, control, probe, mc);
  REQUIRE(rows.size() == 3);
  for (const VariationRow& row : rows) {
    // At the synthesized equilibrium the state and affine first-order
    // weights vanish, leaving exactly the (1/2) <R_agg v, v> ramp, which
    // the trapezoid rule integrates exactly for this constant integrand.
    CHECK(std::abs(row.first_order - row.eps) <= 1e-6 * row.eps);
    CHECK(row.second_kernel > 0.0);  // negative response kernel, D != 0
    CHECK(row.recon_error <= 3.0 * (row.direct_se + row.second_se) + 1e-3 * row.eps);
    CHECK(std::abs(row.second_mc - row.second_kernel) <=
          2.0 * row.second_se + 5.0 * row.eps * row.eps);
  }
}

TEST_CASE("estimator guards its preconditions") {
  Coefficients prob = mean_variance_instance(32);
  McParams mc;
  mc.outer = 1;
  CHECK_THROWS_AS(estimate_cost(prob, zero_control(prob), 0.0, prob.x0, mc), ProblemError);
  PerturbationProbe empty;
  empty.v = Vector::Constant(1, 1.0);
  CHECK_THROWS_AS(
      perturbation_quotient(prob, StrategyPair{}, empty, McParams{}), ProblemError);
  CHECK(worker_count() >= 1);
}
