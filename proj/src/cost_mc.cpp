#include "tilq/mc.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace tilq {

namespace {

// Sample views: which state/control a cost evaluator sees for path p at
// node k. The spiked view adds the spike response to the state and routes
// it through Theta1, plus the bump itself inside the window.
struct PathView {
  std::function<Vector(int p, int k)> state;
  std::function<Vector(int p, int k)> control;
};

PathView base_view(const FeedbackControl& c, const SimulationEnsemble& ens) {
  PathView v;
  v.state = [&ens](int p, int k) { return ens.X[p][k]; };
  v.control = [&c, &ens](int p, int k) {
    return Vector((c.Theta1[k] + c.Theta2[k]) * ens.X[p][k] + c.phi[k]);
  };
  return v;
}

PathView spiked_view(const Coefficients& prob, const FeedbackControl& c,
                     const SimulationEnsemble& ens, const SpikeSpec& spike) {
  int ws = node_at(prob.grid, spike.t);
  int we = ws + spike.steps;
  PathView v;
  v.state = [&ens](int p, int k) { return Vector(ens.X[p][k] + ens.X0[p][k]); };
  v.control = [&c, &ens, &spike, ws, we](int p, int k) {
    Vector u = c.Theta1[k] * (ens.X[p][k] + ens.X0[p][k]) + c.Theta2[k] * ens.X[p][k] + c.phi[k];
    if (k >= ws && k < we) u += spike.v;
    return u;
  };
  return v;
}

// Pathwise (non-tilde) cost of one path under a view:
// (1/2) [ trapz <Q x, x> + 2 <S x, u> + <R u, u> + <G x_T, x_T> ].
double pathwise_cost(const Coefficients& prob, const PathView& view, int p, int k0) {
  const TimeGrid& g = prob.grid;
  double acc = 0.0;
  for (int k = k0; k <= g.N; ++k) {
    Vector x = view.state(p, k);
    Vector u = view.control(p, k);
    double f = x.dot(prob.Q[k] * x) + 2.0 * u.dot(prob.S[k] * x) + u.dot(prob.R[k] * u);
    double w = (k == k0 || k == g.N) ? 0.5 * g.h : g.h;
    if (k0 == g.N) w = 0.0;
    acc += w * f;
  }
  Vector xT = view.state(p, g.N);
  return 0.5 * (acc + xT.dot(prob.G * xT));
}

// Unbiased estimate of (mean b)' M (mean a) from paired samples: the
// plug-in value minus the cross-covariance correction c / K with
// c = sum_i (b_i - bbar)' M (a_i - abar) / (K - 1).
double bilinear_mean_unbiased(const Matrix& M, const std::vector<Vector>& a,
                              const std::vector<Vector>& b) {
  const int K = static_cast<int>(a.size());
  Vector am = Vector::Zero(a[0].size());
  Vector bm = Vector::Zero(b[0].size());
  for (int i = 0; i < K; ++i) {
    am += a[i];
    bm += b[i];
  }
  am /= K;
  bm /= K;
  double plug_in = bm.dot(M * am);
  if (K < 2) return plug_in;
  double c = 0.0;
  for (int i = 0; i < K; ++i) c += (b[i] - bm).dot(M * (a[i] - am));
  c /= (K - 1);
  return plug_in - c / K;
}

// Conditional-mean (tilde) cost terms from the inner paths [lo, hi):
// (1/2) [ trapz ( <Qt xb, xb> + 2 <St xb, ub> + <Rt ub, ub> )
//         + <Gt xb_T, xb_T> + 2 <g, xb_T> ]
// with every bilinear form of means replaced by its unbiased estimator.
double tilde_cost(const Coefficients& prob, const PathView& view, int lo, int hi, int k0) {
  const TimeGrid& g = prob.grid;
  const int K = hi - lo;
  double acc = 0.0;
  std::vector<Vector> xs(K), us(K);
  for (int k = k0; k <= g.N; ++k) {
    for (int p = lo; p < hi; ++p) {
      xs[p - lo] = view.state(p, k);
      us[p - lo] = view.control(p, k);
    }
    double f = bilinear_mean_unbiased(prob.Q_tilde[k], xs, xs) +
               2.0 * bilinear_mean_unbiased(prob.S_tilde[k], xs, us) +
               bilinear_mean_unbiased(prob.R_tilde[k], us, us);
    double w = (k == k0 || k == g.N) ? 0.5 * g.h : g.h;
    if (k0 == g.N) w = 0.0;
    acc += w * f;
  }
  for (int p = lo; p < hi; ++p) xs[p - lo] = view.state(p, g.N);
  Vector xTm = Vector::Zero(prob.n);
  for (int p = 0; p < K; ++p) xTm += xs[p];
  xTm /= K;
  double terminal = bilinear_mean_unbiased(prob.G_tilde, xs, xs) + 2.0 * prob.g.dot(xTm);
  return 0.5 * (acc + terminal);
}

struct TildeDiff {
  double value = 0.0;
  double se = 0.0;
};

// Spiked-minus-base conditional-mean cost from one inner ensemble. The
// point value uses the full ensemble; the fluctuation is estimated from
// disjoint path batches (the inner means are noisy too, and a difference
// quotient divides that noise by eps, so it cannot be ignored).
TildeDiff tilde_diff(const Coefficients& prob, const PathView& spiked, const PathView& base,
                     int inner, int k0) {
  TildeDiff out;
  out.value =
      tilde_cost(prob, spiked, 0, inner, k0) - tilde_cost(prob, base, 0, inner, k0);
  const int nb = std::min(16, inner / 2);
  if (nb < 2) return out;
  const int bs = inner / nb;
  std::vector<double> batch(nb);
  for (int b = 0; b < nb; ++b) {
    int lo = b * bs;
    int hi = (b == nb - 1) ? inner : lo + bs;
    batch[b] = tilde_cost(prob, spiked, lo, hi, k0) - tilde_cost(prob, base, lo, hi, k0);
  }
  double mean = 0.0;
  for (double v : batch) mean += v;
  mean /= nb;
  double ss = 0.0;
  for (double v : batch) ss += (v - mean) * (v - mean);
  out.se = std::sqrt(ss / (nb - 1) / nb);
  return out;
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  const int K = static_cast<int>(v.size());
  for (double x : v) out.mean += x;
  out.mean /= K;
  if (K < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(ss / (K - 1));
  return out;
}

FeedbackControl place_strategy(const Coefficients& prob, const StrategyPair& strategy,
                               PerturbMode mode) {
  FeedbackControl c = zero_control(prob);
  c.phi = strategy.phi;
  if (mode == PerturbMode::closed_loop)
    c.Theta1 = strategy.Theta;
  else
    c.Theta2 = strategy.Theta;
  return c;
}

Vector start_state(const Coefficients& prob, const FeedbackControl& control, double t,
                   const Vector* xi) {
  if (xi) {
    if (xi->size() != prob.n) throw ProblemError("start state has wrong dimension");
    return *xi;
  }
  return mean_trajectory(prob, control, 0.0, prob.x0)[node_at(prob.grid, t)];
}

}  // namespace

CostEstimate estimate_cost(const Coefficients& prob, const FeedbackControl& control, double t,
                           const Vector& xi, const McParams& params) {
  if (params.outer < 2 || params.inner < 2)
    throw ProblemError("estimate_cost: need at least two paths in each ensemble");
  const int k0 = node_at(prob.grid, t);

  SimulationEnsemble inner = simulate(prob, control, xi, t, params.seed, /*stream=*/1,
                                      params.inner);
  double tilde = tilde_cost(prob, base_view(control, inner), 0, params.inner, k0);

  SimulationEnsemble outer = simulate(prob, control, xi, t, params.seed, /*stream=*/0,
                                      params.outer);
  PathView view = base_view(control, outer);
  std::vector<double> costs(params.outer);
  for (int p = 0; p < params.outer; ++p) costs[p] = pathwise_cost(prob, view, p, k0);
  MeanSd ms = mean_sd(costs);

  CostEstimate out;
  out.mean = ms.mean + tilde;
  out.std_error = ms.sd / std::sqrt(static_cast<double>(params.outer));
  out.outer = params.outer;
  out.inner = params.inner;
  return out;
}

std::vector<QuotientPoint> perturbation_quotient(const Coefficients& prob,
                                                 const StrategyPair& strategy,
                                                 const PerturbationProbe& probe,
                                                 const McParams& params, const Vector* xi_opt) {
  if (probe.eps_steps.empty())
    throw ProblemError("perturbation_quotient: probe carries no spike widths");
  FeedbackControl control = place_strategy(prob, strategy, probe.mode);
  Vector xi = start_state(prob, control, probe.t, xi_opt);
  const int k0 = node_at(prob.grid, probe.t);

  std::vector<QuotientPoint> out;
  out.reserve(probe.eps_steps.size());
  for (int steps : probe.eps_steps) {
    SpikeSpec spike{probe.v, probe.t, steps};
    double eps = steps * prob.grid.h;

    SimulationEnsemble inner =
        simulate(prob, control, xi, probe.t, params.seed, /*stream=*/1, params.inner, &spike);
    TildeDiff dtilde = tilde_diff(prob, spiked_view(prob, control, inner, spike),
                                  base_view(control, inner), params.inner, k0);

    SimulationEnsemble outer =
        simulate(prob, control, xi, probe.t, params.seed, /*stream=*/0, params.outer, &spike);
    PathView base = base_view(control, outer);
    PathView spiked = spiked_view(prob, control, outer, spike);
    std::vector<double> dc(params.outer);
    for (int p = 0; p < params.outer; ++p)
      dc[p] = pathwise_cost(prob, spiked, p, k0) - pathwise_cost(prob, base, p, k0);
    MeanSd ms = mean_sd(dc);

    QuotientPoint q;
    q.eps = eps;
    q.quotient = (ms.mean + dtilde.value) / eps;
    q.std_error = std::sqrt(ms.sd * ms.sd / params.outer + dtilde.se * dtilde.se) / eps;
    out.push_back(q);
  }
  return out;
}

VariationIntegrands variation_integrands(const Coefficients& prob, const FeedbackControl& control,
                                         const KernelSolution& combined) {
  const int N = prob.grid.N;
  VariationIntegrands out;
  out.Wx.resize(N + 1);
  out.w0.resize(N + 1);
  out.R_agg.resize(N + 1);
  out.Wcross.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    Matrix R_agg = prob.R[k] + prob.R_tilde[k];
    Matrix S_agg = prob.S[k] + prob.S_tilde[k];
    Matrix Th_sum = control.Theta1[k] + control.Theta2[k];
    const Matrix& P1 = combined.P1[k];
    out.Wx[k] = S_agg + R_agg * Th_sum -
                (prob.B[k].transpose() * (P1 + combined.P2[k]) +
                 prob.D[k].transpose() * (P1 * (prob.C[k] + prob.D[k] * Th_sum)));
    out.w0[k] = R_agg * control.phi[k] -
                prob.B[k].transpose() * (combined.P3[k] + combined.P4[k]) -
                prob.D[k].transpose() *
                    (P1 * (prob.D[k] * control.phi[k] + prob.sigma[k]) + combined.L4[k]);
    out.R_agg[k] = R_agg;
    out.Wcross[k] = S_agg.transpose() + control.Theta1[k].transpose() * R_agg;
  }
  return out;
}

std::vector<VariationRow> decompose_variation(const Coefficients& prob,
                                              const FeedbackControl& control,
                                              const PerturbationProbe& probe,
                                              const McParams& params, const Vector* xi_opt) {
  if (probe.eps_steps.empty())
    throw ProblemError("decompose_variation: probe carries no spike widths");
  Vector xi = start_state(prob, control, probe.t, xi_opt);
  const int k0 = node_at(prob.grid, probe.t);
  const TimeGrid& g = prob.grid;

  KernelSolution combined = solve_combined_kernel(prob, control);
  VariationIntegrands wi = variation_integrands(prob, control, combined);
  MatrixPath Pbar = solve_second_order_kernel(prob, control.Theta1);
  const Matrix& Dt = prob.D[k0];

  std::vector<VariationRow> out;
  out.reserve(probe.eps_steps.size());
  for (int steps : probe.eps_steps) {
    SpikeSpec spike{probe.v, probe.t, steps};
    double eps = steps * g.h;
    int kend = k0 + steps;

    SimulationEnsemble inner =
        simulate(prob, control, xi, probe.t, params.seed, /*stream=*/1, params.inner, &spike);
    TildeDiff dtilde = tilde_diff(prob, spiked_view(prob, control, inner, spike),
                                  base_view(control, inner), params.inner, k0);

    SimulationEnsemble outer =
        simulate(prob, control, xi, probe.t, params.seed, /*stream=*/0, params.outer, &spike);
    PathView base = base_view(control, outer);
    PathView spiked = spiked_view(prob, control, outer, spike);

    std::vector<double> dc(params.outer), first(params.outer), cross(params.outer),
        second(params.outer);
    for (int p = 0; p < params.outer; ++p) {
      dc[p] = pathwise_cost(prob, spiked, p, k0) - pathwise_cost(prob, base, p, k0);
      double f = 0.0, c = 0.0;
      for (int k = k0; k <= kend; ++k) {
        double w = (k == k0 || k == kend) ? 0.5 * g.h : g.h;
        Vector integrand = wi.Wx[k] * outer.X[p][k] + wi.w0[k] + 0.5 * (wi.R_agg[k] * probe.v);
        f += w * integrand.dot(probe.v);
        c += w * (wi.Wcross[k] * probe.v).dot(outer.X0[p][k]);
      }
      first[p] = f;
      cross[p] = c;
      second[p] = dc[p] - f - c;
    }
    MeanSd ms_dc = mean_sd(dc);
    MeanSd ms_first = mean_sd(first);
    MeanSd ms_cross = mean_sd(cross);
    MeanSd ms_second = mean_sd(second);

    VariationRow row;
    row.eps = eps;
    row.direct = ms_dc.mean + dtilde.value;
    row.direct_se =
        std::sqrt(ms_dc.sd * ms_dc.sd / params.outer + dtilde.se * dtilde.se);
    row.first_order = ms_first.mean;
    row.cross = ms_cross.mean;
    row.second_mc = ms_second.mean + dtilde.value;
    row.second_se =
        std::sqrt(ms_second.sd * ms_second.sd / params.outer + dtilde.se * dtilde.se);
    row.second_kernel = -0.5 * eps * probe.v.dot(Dt.transpose() * Pbar[k0] * Dt * probe.v);
    row.recon_error = std::abs(row.direct - (row.first_order + row.cross + row.second_kernel));
    out.push_back(row);
  }
  return out;
}

}  // namespace tilq
