// Benchmark: OpenMP ensemble simulation against the serial reference on a
// mid-sized instance, verifying that both produce identical bits before
// reporting throughput.
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "tilq/mc.hpp"
#include "tilq/problem.hpp"
#include "tilq/rng.hpp"

namespace {

tilq::Coefficients bench_problem(int n, int m, int N) {
  using tilq::Matrix;
  using tilq::Vector;
  tilq::Coefficients prob = tilq::make_zero_problem(n, m, 1.0, N);
  tilq::CounterRng rng(0xbe5c0ull, 0, 0);
  std::uint64_t c = 0;
  auto fill = [&](Matrix& M, double scale) {
    for (int i = 0; i < M.rows(); ++i)
      for (int j = 0; j < M.cols(); ++j) M(i, j) = scale * (2.0 * rng.uniform(c++) - 1.0);
  };
  Matrix A(n, n), B(n, m), C(n, n), D(n, m);
  fill(A, 1.0);
  A -= Matrix::Identity(n, n) * 1.5;  // keep the drift stable at T = 1
  fill(B, 1.0);
  fill(C, 0.3);
  fill(D, 0.3);
  prob.A = tilq::constant_path(A, N);
  prob.B = tilq::constant_path(B, N);
  prob.C = tilq::constant_path(C, N);
  prob.D = tilq::constant_path(D, N);
  prob.sigma = tilq::constant_path(Vector(Vector::Constant(n, 0.2)), N);
  prob.x0 = Vector::Constant(n, 1.0);
  tilq::validate(prob);
  return prob;
}

double run_once(const char* tag, bool parallel, const tilq::Coefficients& prob,
                const tilq::FeedbackControl& control, int paths,
                tilq::SimulationEnsemble& out) {
  auto start = std::chrono::steady_clock::now();
  out = parallel ? tilq::simulate(prob, control, prob.x0, 0.0, 0x5eedull, 0, paths)
                 : tilq::simulate_serial(prob, control, prob.x0, 0.0, 0x5eedull, 0, paths);
  auto stop = std::chrono::steady_clock::now();
  double secs = std::chrono::duration<double>(stop - start).count();
  std::printf("%-8s %8d paths in %8.3f s  (%10.0f paths/s)\n", tag, paths, secs, paths / secs);
  return secs;
}

}  // namespace

int main(int argc, char** argv) {
  int n = 4, m = 2, N = 512, paths = 8192;
  if (argc > 1) paths = std::atoi(argv[1]);
  if (argc > 2) N = std::atoi(argv[2]);
  if (paths < 1 || N < 1) {
    std::fprintf(stderr, "usage: bench_ensemble [paths] [steps]\n");
    return 2;
  }

  tilq::Coefficients prob = bench_problem(n, m, N);
  tilq::FeedbackControl control = tilq::zero_control(prob);
  for (auto& Th : control.Theta1) Th = -0.2 * tilq::Matrix::Identity(m, n);

  std::printf("ensemble benchmark: n=%d m=%d steps=%d workers=%d\n", n, m, N,
              tilq::worker_count());
  tilq::SimulationEnsemble serial, parallel;
  double t_serial = run_once("serial", false, prob, control, paths, serial);
  double t_parallel = run_once("parallel", true, prob, control, paths, parallel);

  for (int p = 0; p < paths; ++p)
    for (int k = 0; k <= N; ++k)
      if ((serial.X[p][k].array() != parallel.X[p][k].array()).any()) {
        std::fprintf(stderr, "mismatch at path %d node %d\n", p, k);
        return 1;
      }
  std::printf("bitwise identical; speedup %.2fx\n", t_serial / t_parallel);
  return 0;
}
