// Shared gain-synthesis sweep used by both equilibrium solvers. Each
// backward step runs a short fixed-point iteration on the left-node gain
// and affine values (the step drift interpolates them linearly inside the
// RK4 stages), then re-evaluates the step once with the converged values
// so the stored kernel is exactly what re-solving with the stored
// strategy produces.
#pragma once

#include "tilq/detail/kernel_steps.hpp"
#include "tilq/equilibrium_report.hpp"
#include "tilq/kernel_ode.hpp"
#include "tilq/linalg.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <utility>

namespace tilq::detail {

/// One backward step given left/right node gains; the correction pointer
/// (used by the strategy variant's re-symmetrization bookkeeping) is null
/// during trial iterations and set only for the final stored evaluation.
using StepFn = std::function<Blocks(int k_left, const Matrix& Theta_left,
                                    const Matrix& Theta_right, const Vector& phi_left,
                                    const Vector& phi_right, const Blocks& right,
                                    double* correction)>;

struct SynthesizedSweep {
  MatrixPath Theta;
  VectorPath phi;
  KernelSolution kernel;
  std::vector<GainSystem> systems;      // per node, at the stored kernel
  std::vector<double> residual_gain;    // ||Mso Theta - Wg|| / (1 + ||Wg||)
  std::vector<double> residual_affine;  // ||Mso phi - Wa|| / (1 + ||Wa||)
  int max_iters_used = 0;
};

inline std::pair<Matrix, Vector> gains_from(const GainSystem& gs, double rtol) {
  PinvResult pi = pinv(gs.Mso, rtol);
  return {Matrix(pi.pinv * gs.Wg), Vector(pi.pinv * gs.Wa)};
}

inline double max_abs(const Matrix& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

inline SynthesizedSweep synthesize_sweep(const Coefficients& prob, const SolverOptions& opts,
                                         const StepFn& step, KernelVariant variant) {
  const int N = prob.grid.N;
  SynthesizedSweep out;
  out.Theta.resize(N + 1);
  out.phi.resize(N + 1);
  out.systems.resize(N + 1);
  out.residual_gain.resize(N + 1);
  out.residual_affine.resize(N + 1);
  out.kernel.variant = variant;
  out.kernel.P1.resize(N + 1);
  out.kernel.P2.resize(N + 1);
  out.kernel.P3.resize(N + 1);
  out.kernel.P4.resize(N + 1);
  out.kernel.L3 = constant_path(Vector::Zero(prob.n), N);
  out.kernel.L4 = constant_path(Vector::Zero(prob.n), N);

  auto store = [&](int k, const Blocks& y) {
    out.kernel.P1[k] = y.P1;
    out.kernel.P2[k] = y.P2;
    out.kernel.P3[k] = y.P3;
    out.kernel.P4[k] = y.P4;
    out.systems[k] = gain_system(prob, k, y);
    out.residual_gain[k] = (out.systems[k].Mso * out.Theta[k] - out.systems[k].Wg).norm() /
                           (1.0 + out.systems[k].Wg.norm());
    out.residual_affine[k] = (out.systems[k].Mso * out.phi[k] - out.systems[k].Wa).norm() /
                             (1.0 + out.systems[k].Wa.norm());
  };

  Blocks y = terminal_blocks(prob);
  {
    GainSystem gs = gain_system(prob, N, y);
    std::tie(out.Theta[N], out.phi[N]) = gains_from(gs, opts.pinv_rtol);
  }
  store(N, y);

  for (int k = N - 1; k >= 0; --k) {
    Matrix Th_g = out.Theta[k + 1];
    Vector ph_g = out.phi[k + 1];
    double delta = std::numeric_limits<double>::infinity();
    int iters = 0;
    while (iters < opts.max_fixed_point_iters) {
      ++iters;
      Blocks trial = step(k, Th_g, out.Theta[k + 1], ph_g, out.phi[k + 1], y, nullptr);
      auto [Th_n, ph_n] = gains_from(gain_system(prob, k, trial), opts.pinv_rtol);
      double scale = 1.0 + std::max(max_abs(Th_n), ph_n.size() ? ph_n.cwiseAbs().maxCoeff() : 0.0);
      delta = std::max(max_abs(Th_n - Th_g), (ph_n - ph_g).cwiseAbs().maxCoeff()) / scale;
      Th_g = std::move(Th_n);
      ph_g = std::move(ph_n);
      if (delta <= opts.fixed_point_tol) break;
    }
    if (delta > opts.fixed_point_tol)
      throw SolverError("gain fixed point did not converge", k);
    out.max_iters_used = std::max(out.max_iters_used, iters);
    out.Theta[k] = Th_g;
    out.phi[k] = ph_g;
    y = step(k, Th_g, out.Theta[k + 1], ph_g, out.phi[k + 1], y,
             &out.kernel.symmetry_correction);
    if (!y.P1.allFinite() || !y.P2.allFinite() || !y.P3.allFinite() || !y.P4.allFinite())
      throw SolverError("kernel sweep diverged", k);
    store(k, y);
  }
  return out;
}

}  // namespace tilq::detail
