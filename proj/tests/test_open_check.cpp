#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_support.hpp"
#include "tilq/open_check.hpp"
#include "tilq/strategy_solver.hpp"

using namespace tilq;
using namespace tilq::testing;

namespace {

// Open-loop realization of the classical optimal feedback on a problem
// with deterministic dynamics: u(s) = gain(s) x(s) along the mean flow.
// For time-consistent data this control is optimal from every point of
// its own trajectory, hence an equilibrium the checker must accept.
VectorPath classical_open_realization(const Coefficients& prob) {
  ClassicalSolution cl = classical_riccati_oracle(prob);
  FeedbackControl fc = zero_control(prob);
  fc.Theta1 = cl.gain;
  VectorPath x = mean_trajectory(prob, fc, 0.0, prob.x0);
  VectorPath u(prob.grid.N + 1);
  for (int k = 0; k <= prob.grid.N; ++k) u[k] = cl.gain[k] * x[k];
  return u;
}

}  // namespace

TEST_CASE("checker accepts the classical optimum on deterministic dynamics") {
  // The candidate is sampled at the nodes and interpolated inside the
  // sweep, so the residual floor is O(h^2); N = 1600 puts it well under
  // the tolerance.
  const double a = 0.2, b = 1.0, q = 1.0, r = 0.5, gT = 0.8;
  Coefficients prob = scalar_classical_instance(a, b, q, r, gT, 1600);
  prob.x0 = Vector::Constant(1, 1.5);
  VectorPath u = classical_open_realization(prob);

  OpenCheckOptions opts;
  opts.solver.res_tol = 1e-6;
  EquilibriumReport report = check_open(prob, u, opts);
  CHECK(report.verdict);
  CHECK(max_abs(report.first_order_residual) <= 5e-7);
  for (double m : report.second_order_margin) CHECK(m >= r - 1e-12);
}

TEST_CASE("checker rejects a do-nothing control when the cost wants motion") {
  Coefficients prob = scalar_classical_instance(0.2, 1.0, 1.0, 0.5, 0.8, 200);
  prob.x0 = Vector::Constant(1, 1.5);
  VectorPath u = constant_path(Vector::Zero(1), 200);
  EquilibriumReport report = check_open(prob, u);
  CHECK_FALSE(report.verdict);
  CHECK(max_abs(report.first_order_residual) > 1e-2);
}

TEST_CASE("second-order margins never depend on the candidate") {
  Coefficients prob = conditional_terminal_suite(0x4001u, 48);
  VectorPath u1 = constant_path(Vector::Zero(2), 48);
  VectorPath u2 = constant_path(Vector::Constant(2, 3.0), 48);
  EquilibriumReport r1 = check_open(prob, u1);
  EquilibriumReport r2 = check_open(prob, u2);
  for (int k = 0; k <= 48; ++k)
    CHECK(r1.second_order_margin[k] == r2.second_order_margin[k]);

  MarginReport standalone = second_order_condition(prob);
  for (int k = 0; k <= 48; ++k)
    CHECK(standalone.margin[k] == r1.second_order_margin[k]);
  CHECK(standalone.verdict);
}

TEST_CASE("an indefinite control weight fails the second-order condition") {
  Coefficients prob = scalar_classical_instance(0.2, 1.0, 1.0, 0.5, 0.8, 32);
  prob.R = constant_path(Matrix::Constant(1, 1, -0.5), 32);
  validate(prob);
  MarginReport mr = second_order_condition(prob);
  CHECK_FALSE(mr.verdict);
  CHECK(mr.margin[0] < 0.0);
}

TEST_CASE("noisy state feedback cannot hide behind the mean trajectory") {
  // Under nondegenerate state noise the stationarity identity is affine in
  // the state with a slope no deterministic control can cancel, so the
  // sampled-path residuals must blow the verdict even if a mean-only
  // check would look plausible at late times.
  Coefficients prob = conditional_terminal_suite(0x4002u, 64);
  StrategySynthesis syn = synthesize_strategy(prob);
  FeedbackControl fc = zero_control(prob);
  fc.Theta1 = syn.strategy.Theta;
  fc.phi = syn.strategy.phi;
  VectorPath x = mean_trajectory(prob, fc, 0.0, prob.x0);
  VectorPath u(65);
  for (int k = 0; k <= 64; ++k) u[k] = syn.strategy.Theta[k] * x[k] + syn.strategy.phi[k];

  EquilibriumReport report = check_open(prob, u);
  CHECK_FALSE(report.verdict);
  CHECK(report.diagnostics.find("per-path") != std::string::npos);
}

TEST_CASE("sampled-path verdict is reproducible for a fixed seed") {
  Coefficients prob = conditional_terminal_suite(0x4003u, 32);
  VectorPath u = constant_path(Vector::Constant(2, 0.5), 32);
  OpenCheckOptions opts;
  opts.seed = 1234;
  EquilibriumReport r1 = check_open(prob, u, opts);
  EquilibriumReport r2 = check_open(prob, u, opts);
  CHECK(r1.diagnostics == r2.diagnostics);
  CHECK(r1.verdict == r2.verdict);
}

TEST_CASE("checker rejects a control path of the wrong length") {
  Coefficients prob = make_zero_problem(1, 1, 1.0, 8);
  VectorPath u(3, Vector::Zero(1));
  CHECK_THROWS_AS(check_open(prob, u), ProblemError);
}
