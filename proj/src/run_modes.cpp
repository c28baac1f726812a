#include "tilq/run_modes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <vector>

#include "tilq/kernel_ode.hpp"
#include "tilq/linalg.hpp"
#include "tilq/mc.hpp"
#include "tilq/open_check.hpp"
#include "tilq/rep_solver.hpp"
#include "tilq/report_io.hpp"
#include "tilq/strategy_solver.hpp"

namespace tilq {
namespace {

// ---------------------------------------------------------------- config --

struct ModeContext {
  Json doc;
  Coefficients prob;
  SolverOptions opts;
  McParams mc;
  double classical_match = 1e-6;
  double slope_tol = 0.5;
  bool seed_given = false;
  std::filesystem::path out;
};

double json_number(const Json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ProblemError(std::string("config: '") + key + "' must be numeric");
  return obj[key].get<double>();
}

ModeContext load_context(const RunConfig& cfg) {
  ModeContext ctx;
  ctx.doc = load_json_file(cfg.config_path);
  if (!ctx.doc.is_object()) throw ProblemError("config: top level must be an object");
  if (!ctx.doc.contains("problem") || !ctx.doc["problem"].is_object())
    throw ProblemError("config: missing 'problem' object");
  ctx.prob = problem_from_json(ctx.doc["problem"]);

  Json tol = ctx.doc.contains("tolerances") ? ctx.doc["tolerances"] : Json::object();
  ctx.opts.psd_tol = cfg.tol_psd.value_or(json_number(tol, "psd", ctx.opts.psd_tol));
  ctx.opts.res_tol = cfg.tol_res.value_or(json_number(tol, "res", ctx.opts.res_tol));
  ctx.opts.range_tol = cfg.tol_range.value_or(json_number(tol, "range", ctx.opts.range_tol));
  ctx.classical_match = json_number(tol, "classical_match", 1e-6);
  ctx.slope_tol = json_number(tol, "slope", 0.5);

  Json mcj = ctx.doc.contains("mc") ? ctx.doc["mc"] : Json::object();
  ctx.mc.outer = cfg.paths.value_or(static_cast<int>(json_number(mcj, "outer", ctx.mc.outer)));
  ctx.mc.inner = cfg.inner.value_or(static_cast<int>(json_number(mcj, "inner", ctx.mc.inner)));
  if (ctx.mc.outer < 2 || ctx.mc.inner < 2)
    throw ProblemError("config: mc.outer and mc.inner must be at least 2");
  if (cfg.seed) {
    ctx.mc.seed = *cfg.seed;
    ctx.seed_given = true;
  } else if (ctx.doc.contains("seed")) {
    if (!ctx.doc["seed"].is_number_integer() && !ctx.doc["seed"].is_number_unsigned())
      throw ProblemError("config: 'seed' must be an integer");
    ctx.mc.seed = ctx.doc["seed"].get<std::uint64_t>();
    ctx.seed_given = true;
  }

  ctx.out = cfg.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(ctx.out, ec);
  if (ec) throw ProblemError("config: cannot create output directory '" + cfg.out_dir + "'");
  return ctx;
}

std::string artifact(const ModeContext& ctx, const char* name) {
  return (ctx.out / name).string();
}

Json tolerance_json(const ModeContext& ctx) {
  return Json{{"psd", ctx.opts.psd_tol},
              {"res", ctx.opts.res_tol},
              {"range", ctx.opts.range_tol}};
}

Json problem_summary(const Coefficients& prob) {
  return Json{{"n", prob.n}, {"m", prob.m}, {"T", prob.grid.T}, {"N", prob.grid.N}};
}

double vec_max(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

double vec_min(const std::vector<double>& v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v) m = std::min(m, x);
  return v.empty() ? 0.0 : m;
}

// ------------------------------------------------------------ candidates --

bool has_candidate(const ModeContext& ctx) {
  return ctx.doc.contains("candidate") && ctx.doc["candidate"].is_object();
}

/// Candidate feedback pair: a strategy CSV path or inline theta/phi data.
StrategyPair candidate_strategy(const ModeContext& ctx, StrategyKind kind) {
  const Json& cand = ctx.doc["candidate"];
  if (cand.contains("strategy_csv"))
    return read_strategy_csv(cand["strategy_csv"].get<std::string>(), ctx.prob, kind);
  if (cand.contains("theta")) {
    StrategyPair s;
    s.kind = kind;
    s.Theta = matrix_path_from_json(cand["theta"], "candidate.theta", ctx.prob.m, ctx.prob.n,
                                    ctx.prob.grid.N);
    if (cand.contains("phi"))
      s.phi = vector_path_from_json(cand["phi"], "candidate.phi", ctx.prob.m, ctx.prob.grid.N);
    else
      s.phi = constant_path(Vector(Vector::Zero(ctx.prob.m)), ctx.prob.grid.N);
    return s;
  }
  throw ProblemError("config: candidate needs 'strategy_csv' or 'theta'");
}

/// Candidate deterministic control path: a control CSV or inline values.
VectorPath candidate_control(const ModeContext& ctx) {
  if (!has_candidate(ctx)) throw ProblemError("config: check-open needs a 'candidate' block");
  const Json& cand = ctx.doc["candidate"];
  if (cand.contains("control_csv"))
    return read_control_csv(cand["control_csv"].get<std::string>(), ctx.prob);
  if (cand.contains("control"))
    return vector_path_from_json(cand["control"], "candidate.control", ctx.prob.m,
                                 ctx.prob.grid.N);
  throw ProblemError("config: candidate needs 'control_csv' or 'control'");
}

// ---------------------------------------------------------------- probes --

struct ProbeSet {
  std::vector<double> ts;
  std::vector<Vector> directions;
  std::vector<int> eps_steps;
  PerturbMode mode = PerturbMode::closed_loop;
};

ProbeSet probe_set(const ModeContext& ctx) {
  ProbeSet ps;
  const Coefficients& prob = ctx.prob;
  Json pj = ctx.doc.contains("probe") ? ctx.doc["probe"] : Json::object();
  if (pj.contains("ts")) {
    for (const auto& v : pj["ts"]) ps.ts.push_back(v.get<double>());
  } else if (pj.contains("t")) {
    ps.ts.push_back(pj["t"].get<double>());
  } else {
    double T = prob.grid.T;
    for (double t : {0.0, T / 4.0, T / 2.0}) ps.ts.push_back(prob.grid.nodes[node_at(prob.grid, t)]);
  }
  if (pj.contains("directions")) {
    for (const auto& d : pj["directions"]) {
      Vector v(prob.m);
      if (d.is_number() && prob.m == 1) {
        v(0) = d.get<double>();
      } else {
        if (!d.is_array() || static_cast<int>(d.size()) != prob.m)
          throw ProblemError("config: probe.directions entries must be length-m vectors");
        for (int i = 0; i < prob.m; ++i) v(i) = d[i].get<double>();
      }
      ps.directions.push_back(v);
    }
  } else {
    for (int i = 0; i < prob.m; ++i) {
      Vector e = Vector::Zero(prob.m);
      e(i) = 1.0;
      ps.directions.push_back(e);
      ps.directions.push_back(-e);
    }
  }
  if (pj.contains("eps_steps")) {
    for (const auto& s : pj["eps_steps"]) ps.eps_steps.push_back(s.get<int>());
  } else {
    ps.eps_steps = {2, 4, 8};
  }
  std::string mode = pj.contains("mode") ? pj["mode"].get<std::string>() : "closed";
  if (mode == "closed")
    ps.mode = PerturbMode::closed_loop;
  else if (mode == "open")
    ps.mode = PerturbMode::open_loop;
  else
    throw ProblemError("config: probe.mode must be 'open' or 'closed'");
  if (ps.ts.empty() || ps.directions.empty() || ps.eps_steps.empty())
    throw ProblemError("config: probe lists must be non-empty");
  return ps;
}

/// Least-squares slope of q against eps within one (t, v) group; zero when
/// the group is degenerate.
double fitted_slope(const std::vector<QuotientPoint>& pts) {
  int k = static_cast<int>(pts.size());
  if (k < 2) return 0.0;
  double me = 0.0, mq = 0.0;
  for (const auto& p : pts) {
    me += p.eps;
    mq += p.quotient;
  }
  me /= k;
  mq /= k;
  double num = 0.0, den = 0.0;
  for (const auto& p : pts) {
    num += (p.eps - me) * (p.quotient - mq);
    den += (p.eps - me) * (p.eps - me);
  }
  return den > 0.0 ? num / den : 0.0;
}

// ----------------------------------------------------------------- modes --

int run_solve(const ModeContext& ctx, bool strategy_mode) {
  const Coefficients& prob = ctx.prob;
  StrategyPair pair;
  KernelSolution kernel;
  EquilibriumReport report;
  if (strategy_mode) {
    StrategySynthesis s = synthesize_strategy(prob, ctx.opts);
    pair = std::move(s.strategy);
    kernel = std::move(s.kernel);
    report = std::move(s.report);
  } else {
    RepSynthesis s = synthesize_rep(prob, ctx.opts);
    pair = std::move(s.strategy);
    kernel = std::move(s.kernel);
    report = std::move(s.report);
  }

  write_kernel_csv(artifact(ctx, "kernel.csv"), prob.grid, kernel);
  write_strategy_csv(artifact(ctx, "strategy.csv"), prob.grid, pair);
  {
    std::vector<std::vector<double>> rows(prob.grid.N + 1);
    for (int k = 0; k <= prob.grid.N; ++k)
      rows[k] = {prob.grid.nodes[k], report.second_order_margin[k],
                 report.first_order_residual[k], report.range_slack_gain[k],
                 report.range_slack_affine[k]};
    write_csv(artifact(ctx, "margins.csv"),
              {"time", "margin", "residual", "range_slack_gain", "range_slack_affine"}, rows);
  }

  Json rep{{"mode", strategy_mode ? "solve-strategy" : "solve-rep"},
           {"problem", problem_summary(prob)},
           {"tolerances", tolerance_json(ctx)},
           {"verdict", report.verdict},
           {"min_margin", vec_min(report.second_order_margin)},
           {"max_residual", vec_max(report.first_order_residual)},
           {"max_range_slack_gain", vec_max(report.range_slack_gain)},
           {"max_range_slack_affine", vec_max(report.range_slack_affine)},
           {"symmetry_correction", kernel.symmetry_correction},
           {"diagnostics", report.diagnostics},
           {"artifacts", Json::array({"kernel.csv", "strategy.csv", "margins.csv"})}};
  write_json_file(artifact(ctx, "report.json"), rep);

  std::cout << (strategy_mode ? "solve-strategy" : "solve-rep") << ": verdict "
            << (report.verdict ? "true" : "false") << ", min margin "
            << vec_min(report.second_order_margin) << ", max residual "
            << vec_max(report.first_order_residual) << "\n";
  return report.verdict ? 0 : 1;
}

int run_check_open(const ModeContext& ctx) {
  const Coefficients& prob = ctx.prob;
  VectorPath u = candidate_control(ctx);
  OpenCheckOptions opts;
  opts.solver = ctx.opts;
  opts.seed = ctx.mc.seed;
  EquilibriumReport report = check_open(prob, u, opts);
  KernelSolution kernel = solve_open_kernel(prob, u);

  write_kernel_csv(artifact(ctx, "kernel.csv"), prob.grid, kernel);
  write_control_csv(artifact(ctx, "control.csv"), prob.grid, u);
  {
    std::vector<std::vector<double>> rows(prob.grid.N + 1);
    for (int k = 0; k <= prob.grid.N; ++k)
      rows[k] = {prob.grid.nodes[k], report.second_order_margin[k],
                 report.first_order_residual[k]};
    write_csv(artifact(ctx, "margins.csv"), {"time", "margin", "residual"}, rows);
  }

  Json rep{{"mode", "check-open"},
           {"problem", problem_summary(prob)},
           {"tolerances", tolerance_json(ctx)},
           {"verdict", report.verdict},
           {"min_margin", vec_min(report.second_order_margin)},
           {"max_residual", vec_max(report.first_order_residual)},
           {"diagnostics", report.diagnostics},
           {"artifacts", Json::array({"kernel.csv", "control.csv", "margins.csv"})}};
  write_json_file(artifact(ctx, "report.json"), rep);

  std::cout << "check-open: verdict " << (report.verdict ? "true" : "false") << ", min margin "
            << vec_min(report.second_order_margin) << ", max residual "
            << vec_max(report.first_order_residual) << "\n";
  return report.verdict ? 0 : 1;
}

int run_verify_mc(const ModeContext& ctx) {
  const Coefficients& prob = ctx.prob;
  if (!ctx.seed_given) throw ProblemError("config: mc modes require a seed");
  ProbeSet ps = probe_set(ctx);
  StrategyKind kind = ps.mode == PerturbMode::closed_loop ? StrategyKind::equilibrium_strategy
                                                          : StrategyKind::representation;
  StrategyPair pair = has_candidate(ctx) ? candidate_strategy(ctx, kind)
                                         : synthesize_strategy(prob, ctx.opts).strategy;

  std::vector<std::string> header{"t"};
  for (int i = 0; i < prob.m; ++i) header.push_back("v_" + std::to_string(i));
  for (const char* c : {"eps", "quotient", "std_error", "threshold", "pass"})
    header.push_back(c);

  bool verdict = true;
  double worst = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> rows;
  Json probes = Json::array();
  for (double t : ps.ts) {
    for (const Vector& v : ps.directions) {
      PerturbationProbe probe;
      probe.t = t;
      probe.v = v;
      probe.eps_steps = ps.eps_steps;
      probe.mode = ps.mode;
      std::vector<QuotientPoint> pts = perturbation_quotient(prob, pair, probe, ctx.mc);
      double slope = fitted_slope(pts);
      Json group = Json::array();
      for (const auto& p : pts) {
        double threshold = -(2.0 * p.std_error + ctx.slope_tol * p.eps * std::abs(slope));
        bool pass = p.quotient >= threshold;
        verdict = verdict && pass;
        worst = std::min(worst, p.quotient - threshold);
        std::vector<double> row{t};
        for (int i = 0; i < prob.m; ++i) row.push_back(v(i));
        row.push_back(p.eps);
        row.push_back(p.quotient);
        row.push_back(p.std_error);
        row.push_back(threshold);
        row.push_back(pass ? 1.0 : 0.0);
        rows.push_back(std::move(row));
        group.push_back(Json{{"eps", p.eps},
                             {"quotient", p.quotient},
                             {"std_error", p.std_error},
                             {"threshold", threshold},
                             {"pass", pass}});
      }
      std::vector<double> vv(v.data(), v.data() + v.size());
      probes.push_back(Json{{"t", t}, {"v", vv}, {"slope", slope}, {"points", group}});
    }
  }
  write_csv(artifact(ctx, "quotients.csv"), header, rows);

  Json rep{{"mode", "verify-mc"},
           {"problem", problem_summary(prob)},
           {"mc", Json{{"outer", ctx.mc.outer}, {"inner", ctx.mc.inner}, {"seed", ctx.mc.seed}}},
           {"probe_mode", ps.mode == PerturbMode::closed_loop ? "closed" : "open"},
           {"slope_tol", ctx.slope_tol},
           {"verdict", verdict},
           {"verdict_rule",
            "finite-eps surrogate for the vanishing-eps lim-inf: every quotient >= "
            "-(2*std_error + slope_tol*eps*|fitted quotient slope|)"},
           {"min_quotient_margin", worst},
           {"probes", probes},
           {"artifacts", Json::array({"quotients.csv"})}};
  write_json_file(artifact(ctx, "report.json"), rep);

  std::cout << "verify-mc: verdict " << (verdict ? "true" : "false") << " over " << rows.size()
            << " probe points, min quotient margin " << worst << "\n";
  return verdict ? 0 : 1;
}

int run_compare(const ModeContext& ctx) {
  const Coefficients& prob = ctx.prob;
  RepStrategyComparison cmp = compare_rep_vs_strategy(prob, ctx.opts);
  std::vector<std::vector<double>> rows(prob.grid.N + 1);
  for (int k = 0; k <= prob.grid.N; ++k)
    rows[k] = {prob.grid.nodes[k], cmp.P1_diff[k], cmp.gain_diff[k], cmp.rep_P1_asym[k],
               cmp.strategy_P1_asym[k]};
  write_csv(artifact(ctx, "compare.csv"),
            {"time", "P1_diff", "gain_diff", "rep_P1_asym", "strategy_P1_asym"}, rows);

  Json rep{{"mode", "compare"},
           {"problem", problem_summary(prob)},
           {"max_P1_diff", cmp.max_P1_diff},
           {"max_gain_diff", cmp.max_gain_diff},
           {"max_rep_P1_asym", cmp.max_rep_P1_asym},
           {"max_strategy_P1_asym", cmp.max_strategy_P1_asym},
           {"artifacts", Json::array({"compare.csv"})}};
  write_json_file(artifact(ctx, "report.json"), rep);

  std::cout << "compare: max kernel diff " << cmp.max_P1_diff << ", max gain diff "
            << cmp.max_gain_diff << ", representation asymmetry " << cmp.max_rep_P1_asym << "\n";
  return 0;
}

int run_reduce_classical(const ModeContext& ctx) {
  const Coefficients& prob = ctx.prob;
  ClassicalSolution classical = classical_riccati_oracle(prob);
  StrategySynthesis synth = synthesize_strategy(prob, ctx.opts);

  double gain_err = 0.0, kernel_err = 0.0;
  std::vector<std::vector<double>> rows(prob.grid.N + 1);
  for (int k = 0; k <= prob.grid.N; ++k) {
    double gd = (synth.strategy.Theta[k] - classical.gain[k]).cwiseAbs().maxCoeff();
    double kd = (synth.kernel.P1[k] + classical.P[k]).cwiseAbs().maxCoeff();
    gain_err = std::max(gain_err, gd);
    kernel_err = std::max(kernel_err, kd);
    rows[k] = {prob.grid.nodes[k], gd, kd};
  }
  write_csv(artifact(ctx, "reduce.csv"), {"time", "gain_diff", "kernel_diff"}, rows);

  bool verdict = gain_err <= ctx.classical_match && kernel_err <= ctx.classical_match;
  Json rep{{"mode", "reduce-classical"},
           {"problem", problem_summary(prob)},
           {"gain_match_error", gain_err},
           {"kernel_match_error", kernel_err},
           {"tolerance", ctx.classical_match},
           {"verdict", verdict},
           {"artifacts", Json::array({"reduce.csv"})}};
  write_json_file(artifact(ctx, "report.json"), rep);

  std::cout << "reduce-classical: verdict " << (verdict ? "true" : "false")
            << ", gain match error " << gain_err << ", kernel match error " << kernel_err << "\n";
  return verdict ? 0 : 1;
}

}  // namespace

int run_mode(const RunConfig& cfg) {
  try {
    ModeContext ctx = load_context(cfg);
    if (cfg.mode == "solve-rep") return run_solve(ctx, false);
    if (cfg.mode == "solve-strategy") return run_solve(ctx, true);
    if (cfg.mode == "check-open") return run_check_open(ctx);
    if (cfg.mode == "verify-mc") return run_verify_mc(ctx);
    if (cfg.mode == "compare") return run_compare(ctx);
    if (cfg.mode == "reduce-classical") return run_reduce_classical(ctx);
    std::cerr << "error: unknown mode '" << cfg.mode << "'\n";
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  } catch (const ProblemError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace tilq
