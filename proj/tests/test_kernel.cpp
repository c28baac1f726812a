#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_support.hpp"
#include "tilq/kernel_ode.hpp"

#include <cmath>

using namespace tilq;
using namespace tilq::testing;

namespace {

// Smooth non-trivial feedback pair for exercising the closed-loop sweeps.
StrategyPair ramp_strategy(const Coefficients& prob, double scale) {
  StrategyPair sp;
  sp.kind = StrategyKind::equilibrium_strategy;
  int N = prob.grid.N;
  Matrix base = random_matrix(0x717Au, 0, prob.m, prob.n, scale);
  Matrix slope = random_matrix(0x717Au, 1, prob.m, prob.n, scale);
  Vector pbase = random_vector(0x717Au, 2, prob.m, scale);
  sp.Theta.resize(N + 1);
  sp.phi.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    double s = prob.grid.nodes[k];
    sp.Theta[k] = base + s * slope;
    sp.phi[k] = (1.0 - 0.5 * s) * pbase;
  }
  return sp;
}

VectorPath constant_control(const Coefficients& prob, double value) {
  return constant_path(Vector::Constant(prob.m, value), prob.grid.N);
}

double kernel_max_diff(const KernelSolution& a, const KernelSolution& b) {
  double worst = max_abs_diff(a.P1, b.P1);
  worst = std::max(worst, max_abs_diff(a.P2, b.P2));
  worst = std::max(worst, max_abs_diff(a.P3, b.P3));
  return std::max(worst, max_abs_diff(a.P4, b.P4));
}

}  // namespace

TEST_CASE("backward RK4 integrator hits fourth order on a scalar flow") {
  // y' = lambda y integrated backward from y(T) = 1; exact value at t is
  // exp(lambda (t - T)).
  const double lambda = -1.3, T = 1.0;
  auto rhs = [&](double, const Vector& y) -> Vector { return lambda * y; };
  TimeGrid g = TimeGrid::uniform(T, 200);
  auto path = integrate_backward(g, Vector::Constant(1, 1.0), rhs);
  CHECK(path.size() == 201);
  CHECK(path[200](0) == 1.0);
  CHECK(path[0](0) == doctest::Approx(std::exp(-lambda * T)).epsilon(1e-9));

  // Halving the step must cut the error by about 2^4.
  auto coarse = integrate_backward(TimeGrid::uniform(T, 10), Vector::Constant(1, 1.0), rhs);
  auto fine = integrate_backward(TimeGrid::uniform(T, 20), Vector::Constant(1, 1.0), rhs);
  double exact = std::exp(-lambda * T);
  double slope = std::log2(std::abs(coarse[0](0) - exact) / std::abs(fine[0](0) - exact));
  CHECK(slope > 3.9);
  CHECK(slope < 4.3);
}

TEST_CASE("backward integrator reports the node where it diverged") {
  auto rhs = [](double, const Vector& y) -> Vector { return -40.0 * y; };
  TimeGrid g = TimeGrid::uniform(1.0, 64);
  try {
    integrate_backward(g, Vector::Constant(1, 1.0), rhs);
    FAIL("expected divergence");
  } catch (const SolverError& err) {
    CHECK(err.node > 0);
    CHECK(err.node < 64);
    CHECK(std::string(err.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("every kernel variant reproduces the terminal data exactly") {
  Coefficients prob = conditional_terminal_suite(0x11u, 32);
  VectorPath u = constant_control(prob, 0.4);
  StrategyPair sp = ramp_strategy(prob, 0.3);
  FeedbackControl fc = zero_control(prob);
  fc.Theta1 = sp.Theta;
  fc.phi = sp.phi;

  for (const KernelSolution& sol :
       {solve_open_kernel(prob, u), solve_rep_kernel(prob, sp), solve_strategy_kernel(prob, sp),
        solve_combined_kernel(prob, fc)}) {
    CHECK((sol.P1[32] + prob.G).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sol.P2[32] + prob.G_tilde).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sol.P3[32].cwiseAbs().maxCoeff() == 0.0);
    CHECK((sol.P4[32] + prob.g).cwiseAbs().maxCoeff() == 0.0);
    for (int k = 0; k <= 32; ++k) {
      CHECK(sol.L3[k].isZero(0.0));
      CHECK(sol.L4[k].isZero(0.0));
    }
  }
}

TEST_CASE("open-system matrix blocks never see the control") {
  Coefficients prob = conditional_terminal_suite(0x22u, 48);
  KernelSolution k1 = solve_open_kernel(prob, constant_control(prob, 0.0));
  KernelSolution k2 = solve_open_kernel(prob, constant_control(prob, 2.5));
  // Bit-identical, not merely close: the matrix drifts contain no u and
  // the joint sweep keeps their arithmetic separate from the vector blocks.
  CHECK(max_abs_diff(k1.P1, k2.P1) == 0.0);
  CHECK(max_abs_diff(k1.P2, k2.P2) == 0.0);
  // The vector blocks, by contrast, must move.
  CHECK(max_abs_diff(k1.P4, k2.P4) > 1e-3);
}

TEST_CASE("open-system vector blocks are linear in the affine data") {
  Coefficients prob = time_consistent_suite(0x33u, 40);

  SUBCASE("superposition in the control when b, sigma, g vanish") {
    Coefficients hom = prob;
    hom.b = constant_path(Vector::Zero(2), 40);
    hom.sigma = constant_path(Vector::Zero(2), 40);
    hom.g = Vector::Zero(2);
    validate(hom);
    VectorPath u1(41), u2(41), usum(41);
    for (int k = 0; k <= 40; ++k) {
      u1[k] = random_vector(0x34u, k, 2, 0.5);
      u2[k] = random_vector(0x35u, k, 2, 0.5);
      usum[k] = u1[k] + u2[k];
    }
    KernelSolution a = solve_open_kernel(hom, u1);
    KernelSolution b = solve_open_kernel(hom, u2);
    KernelSolution s = solve_open_kernel(hom, usum);
    for (int k = 0; k <= 40; ++k) {
      CHECK((s.P3[k] - a.P3[k] - b.P3[k]).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((s.P4[k] - a.P4[k] - b.P4[k]).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }

  SUBCASE("homogeneity in (b, sigma, g) at zero control") {
    Coefficients doubled = prob;
    for (auto& v : doubled.b) v *= 2.0;
    for (auto& v : doubled.sigma) v *= 2.0;
    doubled.g *= 2.0;
    validate(doubled);
    VectorPath zero = constant_control(prob, 0.0);
    KernelSolution one = solve_open_kernel(prob, zero);
    KernelSolution two = solve_open_kernel(doubled, zero);
    for (int k = 0; k <= 40; ++k) {
      CHECK((two.P3[k] - 2.0 * one.P3[k]).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((two.P4[k] - 2.0 * one.P4[k]).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("kernel sweep converges at fourth order under grid refinement") {
  auto solve_at = [&](int N) {
    Coefficients prob = time_consistent_suite(0x44u, N);
    return solve_open_kernel(prob, constant_control(prob, 0.7));
  };
  KernelSolution c = solve_at(25);
  KernelSolution m = solve_at(50);
  KernelSolution f = solve_at(100);
  double e1 = std::max((c.P1[0] - m.P1[0]).cwiseAbs().maxCoeff(),
                       (c.P4[0] - m.P4[0]).cwiseAbs().maxCoeff());
  double e2 = std::max((m.P1[0] - f.P1[0]).cwiseAbs().maxCoeff(),
                       (m.P4[0] - f.P4[0]).cwiseAbs().maxCoeff());
  CHECK(e1 > 1e-12);  // errors must dominate round-off for the slope to mean anything
  CHECK(std::log2(e1 / e2) > 3.9);
}

TEST_CASE("variant-agnostic solver reproduces the open system under substitution") {
  // Constant coefficients and a constant control: the substituted paths
  // are then exact, not interpolants of products.
  Coefficients prob = conditional_terminal_suite(0x55u, 36);
  int N = prob.grid.N;
  Vector u0 = Vector::Constant(prob.m, 0.6);
  VectorPath u = constant_path(u0, N);

  GenericBackwardSpec spec;
  spec.n = prob.n;
  spec.A1 = prob.A;
  spec.B1 = prob.C;
  spec.C1 = constant_path(Matrix(prob.A[0].transpose()), N);
  spec.C2 = constant_path(Matrix(prob.C[0].transpose()), N);
  spec.C3 = constant_path(Matrix(-prob.Q[0]), N);
  spec.C4 = constant_path(Matrix(-prob.Q_tilde[0]), N);
  spec.A2 = constant_path(Vector(prob.b[0] + prob.B[0] * u0), N);
  spec.B2 = constant_path(Vector(prob.sigma[0] + prob.D[0] * u0), N);
  spec.C5 = constant_path(Vector(-prob.S[0].transpose() * u0), N);
  spec.C6 = constant_path(Vector(-prob.S_tilde[0].transpose() * u0), N);
  spec.D1 = -prob.G;
  spec.D2 = -prob.G_tilde;
  spec.D3 = -prob.g;

  KernelSolution open = solve_open_kernel(prob, u);
  KernelSolution gen = solve_generic_kernel(spec, prob.grid);
  CHECK(kernel_max_diff(open, gen) <= 1e-12);
}

TEST_CASE("variant-agnostic solver rejects malformed coefficient paths") {
  GenericBackwardSpec spec;
  spec.n = 2;
  CHECK_THROWS_AS(solve_generic_kernel(spec, TimeGrid::uniform(1.0, 4)), ProblemError);
}

TEST_CASE("spiked-family sweep specializes to each dedicated sweep") {
  Coefficients prob = conditional_terminal_suite(0x66u, 36);
  StrategyPair sp = ramp_strategy(prob, 0.3);
  int N = prob.grid.N;

  SUBCASE("feedback through the realized state only: strategy system") {
    FeedbackControl fc = zero_control(prob);
    fc.Theta1 = sp.Theta;
    fc.phi = sp.phi;
    CHECK(kernel_max_diff(solve_combined_kernel(prob, fc), solve_strategy_kernel(prob, sp)) <=
          1e-12);
  }
  SUBCASE("feedback through the base state only: representation system") {
    FeedbackControl fc = zero_control(prob);
    fc.Theta2 = sp.Theta;
    fc.phi = sp.phi;
    CHECK(kernel_max_diff(solve_combined_kernel(prob, fc), solve_rep_kernel(prob, sp)) <= 1e-12);
  }
  SUBCASE("no feedback at all: open system") {
    VectorPath u(N + 1);
    for (int k = 0; k <= N; ++k) u[k] = sp.phi[k];
    FeedbackControl fc = control_from_open(prob, u);
    CHECK(kernel_max_diff(solve_combined_kernel(prob, fc), solve_open_kernel(prob, u)) <= 1e-12);
  }
}

TEST_CASE("strategy sweep keeps its matrix blocks symmetric") {
  Coefficients prob = conditional_terminal_suite(0x77u, 64);
  StrategyPair sp = ramp_strategy(prob, 0.4);
  KernelSolution sol = solve_strategy_kernel(prob, sp);
  for (int k = 0; k <= 64; ++k) {
    CHECK((sol.P1[k] - sol.P1[k].transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sol.P2[k] - sol.P2[k].transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
  double scale = 0.0;
  for (const Matrix& P : sol.P1) scale = std::max(scale, P.cwiseAbs().maxCoeff());
  CHECK(sol.symmetry_correction >= 0.0);
  CHECK(sol.symmetry_correction <= 1e-12 * (1.0 + scale));
}

TEST_CASE("quadratic response kernel collapses to the open matrix block at zero gain") {
  Coefficients prob = time_consistent_suite(0x88u, 40);
  MatrixPath zero_gain = constant_path(Matrix::Zero(prob.m, prob.n), 40);
  MatrixPath Pbar = solve_second_order_kernel(prob, zero_gain);
  KernelSolution open = solve_open_kernel(prob, constant_control(prob, 0.0));
  CHECK(max_abs_diff(Pbar, open.P1) <= 1e-13);
  CHECK((Pbar[40] + prob.G).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean flow matches constant-coefficient closed forms") {
  SUBCASE("uncontrolled scalar exponential") {
    Coefficients prob = make_zero_problem(1, 1, 1.0, 128);
    prob.A = constant_path(Matrix::Constant(1, 1, 0.8), 128);
    validate(prob);
    VectorPath x = mean_trajectory(prob, zero_control(prob), 0.0, Vector::Constant(1, 2.0));
    CHECK(x[128](0) == doctest::Approx(2.0 * std::exp(0.8)).epsilon(1e-10));
  }
  SUBCASE("affine feedback shifts the rate and adds a source") {
    // dx = (a + b theta) x + b phi, closed form via the shifted exponential.
    const double a = 0.3, bc = 1.2, theta = -0.5, phi = 0.4;
    Coefficients prob = make_zero_problem(1, 1, 1.0, 128);
    prob.A = constant_path(Matrix::Constant(1, 1, a), 128);
    prob.B = constant_path(Matrix::Constant(1, 1, bc), 128);
    validate(prob);
    FeedbackControl fc = zero_control(prob);
    fc.Theta1 = constant_path(Matrix::Constant(1, 1, theta), 128);
    fc.phi = constant_path(Vector::Constant(1, phi), 128);
    const double lam = a + bc * theta, src = bc * phi, x0 = 1.5;
    double exact = (x0 + src / lam) * std::exp(lam) - src / lam;
    VectorPath x = mean_trajectory(prob, fc, 0.0, Vector::Constant(1, x0));
    CHECK(x[128](0) == doctest::Approx(exact).epsilon(1e-10));
  }
  SUBCASE("start nodes before t0 hold the initial state") {
    Coefficients prob = make_zero_problem(1, 1, 1.0, 8);
    prob.A = constant_path(Matrix::Constant(1, 1, 1.0), 8);
    validate(prob);
    VectorPath x = mean_trajectory(prob, zero_control(prob), 0.5, Vector::Constant(1, 3.0));
    for (int k = 0; k <= 4; ++k) CHECK(x[k](0) == 3.0);
    CHECK(x[8](0) > 3.0);
  }
}

TEST_CASE("adjoint evaluations assemble the kernel blocks as documented") {
  Coefficients prob = conditional_terminal_suite(0x99u, 16);
  VectorPath u = constant_control(prob, 0.3);
  KernelSolution sol = solve_open_kernel(prob, u);
  AdjointPair adj{&prob, &sol};
  double s = prob.grid.nodes[5];
  Vector x = random_vector(0x9Au, 0, 2);
  Vector xm = random_vector(0x9Au, 1, 2);
  CHECK((adj.M(s, x, xm) - (sol.P1[5] * x + sol.P2[5] * xm + sol.P3[5] + sol.P4[5])).norm() <=
        1e-14);
  CHECK((adj.M_diag(s, x) - adj.M(s, x, x)).norm() <= 1e-14);
  Vector expected_N =
      sol.P1[5] * (prob.C[5] * x + prob.D[5] * u[5] + prob.sigma[5]) + sol.L4[5];
  CHECK((adj.N(s, x, u[5]) - expected_N).norm() <= 1e-14);
}

TEST_CASE("adjoint drift identity holds along the mean flow up to grid error") {
  Coefficients prob = conditional_terminal_suite(0xAAu, 128);
  VectorPath u = constant_control(prob, 0.5);
  KernelSolution sol = solve_open_kernel(prob, u);

  SUBCASE("interior start time") {
    auto res = decoupling_residual(sol, prob, u, 0.25);
    CHECK(res.size() == 128 - 32 + 1);
    // Central differences of a smooth flow: O(h^2) residual.
    CHECK(max_abs(res) <= 5e-3);
  }
  SUBCASE("terminal start degenerates to the terminal identity") {
    auto res = decoupling_residual(sol, prob, u, 1.0);
    REQUIRE(res.size() == 1);
    CHECK(res[0] <= 1e-14);
  }
}

TEST_CASE("kernel sweeps surface divergence as a solver error with a node") {
  Coefficients prob = make_zero_problem(2, 1, 1.0, 64);
  prob.A = constant_path(Matrix(20.0 * Matrix::Identity(2, 2)), 64);
  prob.G = Matrix::Identity(2, 2);
  validate(prob);
  VectorPath u = constant_control(prob, 0.0);
  try {
    solve_open_kernel(prob, u);
    FAIL("expected divergence");
  } catch (const SolverError& err) {
    CHECK(err.node > 0);
    CHECK(err.node < 64);
  }
  CHECK_THROWS_AS(solve_strategy_kernel(prob, ramp_strategy(prob, 0.0)), SolverError);
}

TEST_CASE("open kernel rejects a control path of the wrong length") {
  Coefficients prob = make_zero_problem(1, 1, 1.0, 8);
  VectorPath u(4, Vector::Zero(1));
  CHECK_THROWS_AS(solve_open_kernel(prob, u), ProblemError);
}
