#include "fedopt/param_optimizer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace fedopt::opt {
namespace {

constexpr double kFeasibilityMargin = 1e-9;

gp::Monomial make_monomial(std::size_t arity, double coefficient,
                           std::initializer_list<std::pair<std::size_t, double>>
                               powers = {}) {
  gp::Monomial m;
  m.coefficient = coefficient;
  m.exponents.assign(arity, 0.0);
  for (const auto& [index, value] : powers) m.exponents[index] = value;
  return m;
}

gp::Posynomial merge_terms(const gp::Posynomial& p) {
  std::map<std::vector<double>, double> acc;
  for (const gp::Monomial& m : p.terms) acc[m.exponents] += m.coefficient;
  gp::Posynomial out;
  for (const auto& [exps, coef] : acc) {
    out.terms.push_back(gp::Monomial{coef, exps});
  }
  return out;
}

bool is_constant(const gp::Posynomial& p) {
  for (const gp::Monomial& m : p.terms) {
    for (double e : m.exponents) {
      if (e != 0.0) return false;
    }
  }
  return true;
}

double constant_value(const gp::Posynomial& p) {
  double v = 0.0;
  for (const gp::Monomial& m : p.terms) v += m.coefficient;
  return v;
}

void check_spec(const OptSpec& spec) {
  const auto& c = spec.constants;
  if (spec.profile.workers.empty()) {
    throw std::invalid_argument("opt: profile needs at least one worker");
  }
  if (c.worker_count != spec.profile.worker_count()) {
    throw std::invalid_argument("opt: constants/profile worker count mismatch");
  }
  if (!(spec.time_limit > 0.0) || !(spec.error_limit > 0.0)) {
    throw std::invalid_argument("opt: limits must be positive");
  }
  if (!(c.lipschitz > 0.0) || !(c.grad_variance > 0.0) ||
      !(c.second_moment > 0.0)) {
    throw std::invalid_argument("opt: L, sigma, G must be positive");
  }
  if (!(c.step_size > 0.0) || c.step_size > 1.0 / c.lipschitz + 1e-12) {
    throw std::invalid_argument("opt: step size must lie in (0, 1/L]");
  }
  if (!spec.worker_samples.empty() &&
      spec.worker_samples.size() != spec.profile.workers.size()) {
    throw std::invalid_argument("opt: worker_samples size mismatch");
  }
}

std::size_t index_of(const Problem3& p, const std::string& name) {
  const auto it = std::find(p.variables.begin(), p.variables.end(), name);
  if (it == p.variables.end()) {
    throw std::logic_error("opt: missing variable " + name);
  }
  return static_cast<std::size_t>(it - p.variables.begin());
}

bool has_variable(const Problem3& p, const std::string& name) {
  return std::find(p.variables.begin(), p.variables.end(), name) !=
         p.variables.end();
}

}  // namespace

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::kGenqsgd: return "genqsgd";
    case Mode::kFedavg: return "fedavg";
    case Mode::kPrsgd: return "prsgd";
    case Mode::kPsgd: return "psgd";
    case Mode::kFedpaq: return "fedpaq";
  }
  return "unknown";
}

double Problem3::objective_value(std::span<const double> x) const {
  return objective.evaluate(x);
}

double Problem3::error_value(std::span<const double> x) const {
  double value = error_posy.terms.empty() ? 0.0 : error_posy.evaluate(x);
  for (const Ratio& r : error_ratios) {
    value += r.numerator.evaluate(x) / r.denominator.evaluate(x);
  }
  return value;
}

double Problem3::max_violation(std::span<const double> x) const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& m : epigraph_monomials) {
    worst = std::max(worst, m.evaluate(x) - 1.0);
  }
  for (const auto& m : bound_monomials) {
    worst = std::max(worst, m.evaluate(x) - 1.0);
  }
  worst = std::max(worst, time_constraint.evaluate(x) - 1.0);
  worst = std::max(worst, error_value(x) / error_limit - 1.0);
  return worst;
}

Problem3 build_equivalent_problem(const OptSpec& spec) {
  check_spec(spec);
  const auto& profile = spec.profile;
  const auto& constants = spec.constants;
  const std::size_t workers = profile.workers.size();
  const std::size_t arity = workers + 4;
  const std::size_t k0 = 0;
  const auto kn = [](std::size_t n) { return 1 + n; };
  const std::size_t b = workers + 1;
  const std::size_t t1 = workers + 2;
  const std::size_t t2 = workers + 3;

  Problem3 p;
  p.mode = Mode::kGenqsgd;
  p.error_limit = spec.error_limit;
  p.variables.push_back("K0");
  for (std::size_t n = 0; n < workers; ++n) {
    p.variables.push_back("K" + std::to_string(n + 1));
  }
  p.variables.push_back("B");
  p.variables.push_back("T1");
  p.variables.push_back("T2");

  // Objective E(K,B): per-worker compute terms plus a per-round constant.
  double round_constant = profile.server.compute_energy() +
                          profile.server.transmit_energy();
  for (std::size_t n = 0; n < workers; ++n) {
    const auto& w = profile.workers[n];
    p.objective.terms.push_back(make_monomial(
        arity, w.compute_energy(), {{k0, 1.0}, {kn(n), 1.0}, {b, 1.0}}));
    round_constant += w.transmit_energy();
  }
  p.objective.terms.push_back(make_monomial(arity, round_constant, {{k0, 1.0}}));

  // Epigraph ties: (C_n/F_n) K_n <= T1 and K_n <= T2.
  for (std::size_t n = 0; n < workers; ++n) {
    gp::Posynomial c;
    c.terms.push_back(make_monomial(arity, profile.workers[n].compute_time(),
                                    {{kn(n), 1.0}, {t1, -1.0}}));
    p.epigraph_monomials.push_back(std::move(c));
  }
  for (std::size_t n = 0; n < workers; ++n) {
    gp::Posynomial c;
    c.terms.push_back(make_monomial(arity, 1.0, {{kn(n), 1.0}, {t2, -1.0}}));
    p.epigraph_monomials.push_back(std::move(c));
  }

  // Relaxed integrality floors and the batch cap.
  {
    gp::Posynomial c;
    c.terms.push_back(make_monomial(arity, 1.0, {{k0, -1.0}}));
    p.bound_monomials.push_back(std::move(c));
  }
  {
    gp::Posynomial c;
    c.terms.push_back(make_monomial(arity, 1.0, {{b, -1.0}}));
    p.bound_monomials.push_back(std::move(c));
  }
  if (!spec.worker_samples.empty()) {
    const double min_samples = *std::min_element(spec.worker_samples.begin(),
                                                 spec.worker_samples.end());
    gp::Posynomial c;
    c.terms.push_back(make_monomial(arity, 1.0 / min_samples, {{b, 1.0}}));
    p.bound_monomials.push_back(std::move(c));
  }

  // Time: (C0/F0 + max_n M_n/r_n + M0/r0) K0 + B K0 T1 <= T_max.
  double upload_time = 0.0;
  for (const auto& w : profile.workers) {
    upload_time = std::max(upload_time, w.transmit_time());
  }
  const double fixed_time = profile.server.compute_time() + upload_time +
                            profile.server.transmit_time();
  p.time_constraint.terms.push_back(
      make_monomial(arity, fixed_time / spec.time_limit, {{k0, 1.0}}));
  p.time_constraint.terms.push_back(make_monomial(
      arity, 1.0 / spec.time_limit, {{k0, 1.0}, {b, 1.0}, {t1, 1.0}}));

  // Error constraint, kept in ratio form: c1 / (K0 sum K) + c2 T2^2 +
  // c3 / B + noise / sum K <= C_max.
  if (constants.c2() > 0.0) {
    p.error_posy.terms.push_back(
        make_monomial(arity, constants.c2(), {{t2, 2.0}}));
  }
  p.error_posy.terms.push_back(
      make_monomial(arity, constants.c3(), {{b, -1.0}}));
  if (constants.c1() > 0.0) {
    Problem3::Ratio r;
    r.numerator.terms.push_back(make_monomial(arity, constants.c1()));
    for (std::size_t n = 0; n < workers; ++n) {
      r.denominator.terms.push_back(
          make_monomial(arity, 1.0, {{k0, 1.0}, {kn(n), 1.0}}));
    }
    p.error_ratios.push_back(std::move(r));
  }
  {
    Problem3::Ratio r;
    for (std::size_t n = 0; n < workers; ++n) {
      const double weight = cost::quant_noise_weight(
          profile.server, profile.workers[n], constants);
      if (weight > 0.0) {
        r.numerator.terms.push_back(
            make_monomial(arity, weight, {{kn(n), 2.0}}));
      }
    }
    if (!r.numerator.terms.empty()) {
      for (std::size_t n = 0; n < workers; ++n) {
        r.denominator.terms.push_back(make_monomial(arity, 1.0, {{kn(n), 1.0}}));
      }
      p.error_ratios.push_back(std::move(r));
    }
  }
  return p;
}

Problem3 build_mode_problem(const OptSpec& spec, Mode mode, int fedavg_m) {
  Problem3 full = build_equivalent_problem(spec);
  if (mode == Mode::kGenqsgd) return full;

  const std::size_t workers = spec.profile.workers.size();
  std::vector<std::string> variables;
  std::vector<gp::Monomial> replacement(workers + 4);

  const auto var = [&](const std::string& name) {
    variables.push_back(name);
    return variables.size() - 1;
  };

  switch (mode) {
    case Mode::kPsgd: {
      const auto vk0 = var("K0"), vb = var("B"), vt1 = var("T1"), vt2 = var("T2");
      replacement[0] = make_monomial(4, 1.0, {{vk0, 1.0}});
      for (std::size_t n = 0; n < workers; ++n) {
        replacement[1 + n] = make_monomial(4, 1.0);
      }
      replacement[workers + 1] = make_monomial(4, 1.0, {{vb, 1.0}});
      replacement[workers + 2] = make_monomial(4, 1.0, {{vt1, 1.0}});
      replacement[workers + 3] = make_monomial(4, 1.0, {{vt2, 1.0}});
      break;
    }
    case Mode::kPrsgd: {
      const auto vk0 = var("K0");
      std::vector<std::size_t> vk(workers);
      for (std::size_t n = 0; n < workers; ++n) {
        vk[n] = var("K" + std::to_string(n + 1));
      }
      const auto vt1 = var("T1"), vt2 = var("T2");
      const std::size_t arity = variables.size();
      replacement[0] = make_monomial(arity, 1.0, {{vk0, 1.0}});
      for (std::size_t n = 0; n < workers; ++n) {
        replacement[1 + n] = make_monomial(arity, 1.0, {{vk[n], 1.0}});
      }
      replacement[workers + 1] = make_monomial(arity, 1.0);  // B = 1
      replacement[workers + 2] = make_monomial(arity, 1.0, {{vt1, 1.0}});
      replacement[workers + 3] = make_monomial(arity, 1.0, {{vt2, 1.0}});
      break;
    }
    case Mode::kFedpaq: {
      const auto vk0 = var("K0"), vk = var("K"), vb = var("B"),
                 vt1 = var("T1"), vt2 = var("T2");
      replacement[0] = make_monomial(5, 1.0, {{vk0, 1.0}});
      for (std::size_t n = 0; n < workers; ++n) {
        replacement[1 + n] = make_monomial(5, 1.0, {{vk, 1.0}});
      }
      replacement[workers + 1] = make_monomial(5, 1.0, {{vb, 1.0}});
      replacement[workers + 2] = make_monomial(5, 1.0, {{vt1, 1.0}});
      replacement[workers + 3] = make_monomial(5, 1.0, {{vt2, 1.0}});
      break;
    }
    case Mode::kFedavg: {
      if (spec.worker_samples.size() != workers) {
        throw std::invalid_argument(
            "fedavg mode requires per-worker sample counts");
      }
      if (fedavg_m < 1) {
        throw std::invalid_argument("fedavg mode requires m >= 1");
      }
      const auto vk0 = var("K0"), vb = var("B"), vt1 = var("T1"), vt2 = var("T2");
      replacement[0] = make_monomial(4, 1.0, {{vk0, 1.0}});
      for (std::size_t n = 0; n < workers; ++n) {
        // K_n = m * I_n / B
        replacement[1 + n] = make_monomial(
            4, static_cast<double>(fedavg_m) * spec.worker_samples[n],
            {{vb, -1.0}});
      }
      replacement[workers + 1] = make_monomial(4, 1.0, {{vb, 1.0}});
      replacement[workers + 2] = make_monomial(4, 1.0, {{vt1, 1.0}});
      replacement[workers + 3] = make_monomial(4, 1.0, {{vt2, 1.0}});
      break;
    }
    case Mode::kGenqsgd:
      break;
  }

  const std::size_t arity = variables.size();
  Problem3 reduced;
  reduced.mode = mode;
  reduced.fedavg_m = mode == Mode::kFedavg ? fedavg_m : 0;
  reduced.variables = variables;
  reduced.error_limit = full.error_limit;
  reduced.objective = merge_terms(gp::remap(full.objective, replacement, arity));

  auto keep = [&](const gp::Posynomial& c, std::vector<gp::Posynomial>& out) {
    gp::Posynomial mapped = merge_terms(gp::remap(c, replacement, arity));
    if (is_constant(mapped)) {
      if (constant_value(mapped) > 1.0 + 1e-12) {
        reduced.trivially_infeasible = true;
      }
      return;
    }
    for (const auto& existing : out) {
      if (existing.terms.size() == mapped.terms.size() &&
          std::equal(existing.terms.begin(), existing.terms.end(),
                     mapped.terms.begin(), [](const auto& a, const auto& b) {
                       return a.coefficient == b.coefficient &&
                              a.exponents == b.exponents;
                     })) {
        return;  // duplicate after substitution
      }
    }
    out.push_back(std::move(mapped));
  };
  for (const auto& c : full.epigraph_monomials) {
    keep(c, reduced.epigraph_monomials);
  }
  for (const auto& c : full.bound_monomials) keep(c, reduced.bound_monomials);
  reduced.time_constraint =
      merge_terms(gp::remap(full.time_constraint, replacement, arity));
  reduced.error_posy = merge_terms(gp::remap(full.error_posy, replacement, arity));
  for (const auto& r : full.error_ratios) {
    Problem3::Ratio mapped;
    mapped.numerator = merge_terms(gp::remap(r.numerator, replacement, arity));
    mapped.denominator =
        merge_terms(gp::remap(r.denominator, replacement, arity));
    reduced.error_ratios.push_back(std::move(mapped));
  }
  return reduced;
}

gp::GeometricProgram build_approx_gp(const Problem3& problem,
                                     std::span<const double> expansion) {
  gp::GeometricProgram out;
  out.variables = problem.variables;
  out.objective = problem.objective;
  for (const auto& c : problem.epigraph_monomials) out.constraints.push_back(c);
  for (const auto& c : problem.bound_monomials) out.constraints.push_back(c);
  out.constraints.push_back(problem.time_constraint);

  gp::Posynomial error = problem.error_posy;
  for (const auto& ratio : problem.error_ratios) {
    // AGM lower bound of the denominator at the expansion point:
    // sum_j v_j(x) >= prod_j (v_j(x)/beta_j)^(beta_j), beta_j = v_j(xbar)/sum.
    std::vector<double> values(ratio.denominator.terms.size());
    double total = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      gp::Posynomial single;
      single.terms.push_back(ratio.denominator.terms[j]);
      values[j] = single.evaluate(expansion);
      total += values[j];
    }
    double log_coef = 0.0;
    std::vector<double> exps(problem.variables.size(), 0.0);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double beta = values[j] / total;
      if (beta <= 0.0) continue;
      const auto& term = ratio.denominator.terms[j];
      log_coef += beta * (std::log(term.coefficient) - std::log(beta));
      for (std::size_t i = 0; i < exps.size(); ++i) {
        exps[i] += beta * term.exponents[i];
      }
    }
    const double inv_coef = std::exp(-log_coef);
    for (const gp::Monomial& num : ratio.numerator.terms) {
      gp::Monomial t;
      t.coefficient = num.coefficient * inv_coef;
      t.exponents.resize(exps.size());
      for (std::size_t i = 0; i < exps.size(); ++i) {
        t.exponents[i] = num.exponents[i] - exps[i];
      }
      error.terms.push_back(std::move(t));
    }
  }
  if (!error.terms.empty()) {
    out.constraints.push_back(
        merge_terms(error).scaled(1.0 / problem.error_limit));
  }
  return out;
}

namespace {

// Completes a candidate by setting each epigraph variable just above the
// maximum its monomials require.
void settle_epigraph(const Problem3& p, std::vector<double>& x) {
  const std::size_t t1 = index_of(p, "T1");
  const std::size_t t2 = index_of(p, "T2");
  for (std::size_t t : {t1, t2}) x[t] = 1.0;
  for (std::size_t t : {t1, t2}) {
    double required = 1e-12;
    for (const auto& c : p.epigraph_monomials) {
      const auto& m = c.terms.front();
      if (m.exponents[t] == -1.0) {
        std::vector<double> probe = x;
        probe[t] = 1.0;
        required = std::max(required, c.evaluate(probe));
      }
    }
    x[t] = required * (1.0 + 1e-7);
  }
}

std::vector<std::size_t> local_indices(const Problem3& p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.variables.size(); ++i) {
    const std::string& name = p.variables[i];
    if (name[0] == 'K' && name != "K0") out.push_back(i);
  }
  return out;
}

std::vector<double> logspace(double lo, double hi, int count) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out.push_back(std::exp(llo + f * (lhi - llo)));
  }
  return out;
}

}  // namespace

std::optional<std::vector<double>> find_feasible_init(const Problem3& problem) {
  if (problem.trivially_infeasible) return std::nullopt;
  const std::size_t k0 = index_of(problem, "K0");
  const auto locals = local_indices(problem);
  const bool has_batch = has_variable(problem, "B");
  const std::size_t batch = has_batch ? index_of(problem, "B") : 0;

  // The balanced seed: B sized so c3/B consumes a quarter of the budget.
  double c3 = 0.0;
  for (const auto& m : problem.error_posy.terms) {
    if (has_batch && m.exponents[batch] == -1.0) c3 = m.coefficient;
  }
  std::vector<double> batch_grid = has_batch
      ? logspace(1.0, 1e4, 9)
      : std::vector<double>{1.0};
  if (has_batch && c3 > 0.0) {
    batch_grid.push_back(std::max(1.0, 4.0 * c3 / problem.error_limit));
  }

  std::vector<double> best_point;
  double best_violation = std::numeric_limits<double>::infinity();
  std::vector<double> best_feasible;
  double best_feasible_energy = std::numeric_limits<double>::infinity();

  std::vector<double> x(problem.variables.size(), 1.0);
  for (double k0v : logspace(1.0, 1e6, 13)) {
    for (double kv : logspace(1e-2, 1e3, 11)) {
      for (double bv : batch_grid) {
        std::fill(x.begin(), x.end(), 1.0);
        x[k0] = k0v;
        for (std::size_t i : locals) x[i] = kv;
        if (has_batch) x[batch] = bv;
        settle_epigraph(problem, x);
        const double violation = problem.max_violation(x);
        if (violation < best_violation) {
          best_violation = violation;
          best_point = x;
        }
        if (violation < -kFeasibilityMargin) {
          const double energy = problem.objective_value(x);
          if (energy < best_feasible_energy) {
            best_feasible_energy = energy;
            best_feasible = x;
          }
        }
      }
    }
  }
  if (!best_feasible.empty()) return best_feasible;
  if (best_point.empty()) return std::nullopt;

  // Phase I: minimize a shared slack on all constraints, re-expanding the
  // error approximation at each round. The approximation is inner, so a
  // slack below one certifies feasibility of the true problem.
  std::vector<double> x_cur = best_point;
  double prev_slack = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 15; ++round) {
    gp::GeometricProgram approx = build_approx_gp(problem, x_cur);
    gp::GeometricProgram slack_gp;
    slack_gp.variables = approx.variables;
    slack_gp.variables.push_back("slack");
    const std::size_t arity = slack_gp.variables.size();
    slack_gp.objective.terms.push_back(
        make_monomial(arity, 1.0, {{arity - 1, 1.0}}));
    for (const auto& c : approx.constraints) {
      gp::Posynomial relaxed;
      for (const auto& m : c.terms) {
        gp::Monomial t = m;
        t.exponents.push_back(-1.0);
        relaxed.terms.push_back(std::move(t));
      }
      slack_gp.constraints.push_back(std::move(relaxed));
    }
    std::vector<double> init = x_cur;
    double start_slack = 1.0;
    for (const auto& c : approx.constraints) {
      start_slack = std::max(start_slack, c.evaluate(x_cur));
    }
    init.push_back(start_slack * 2.0 + 1.0);
    const auto res = gp::solve(slack_gp, init, {1e-9, 500});
    if (res.status == gp::SolveStatus::kInfeasible) return std::nullopt;
    const double slack = res.point.back();
    x_cur.assign(res.point.begin(), res.point.end() - 1);
    if (slack < 1.0 - 1e-7 &&
        problem.max_violation(x_cur) < -kFeasibilityMargin) {
      return x_cur;
    }
    if (std::abs(prev_slack - slack) < 1e-10 * std::max(1.0, slack)) break;
    prev_slack = slack;
  }
  return std::nullopt;
}

namespace {

std::vector<double> ratio_betas(const Problem3& problem,
                                std::span<const double> x) {
  if (problem.error_ratios.empty()) return {};
  const auto& den = problem.error_ratios.back().denominator;
  std::vector<double> betas(den.terms.size());
  double total = 0.0;
  for (std::size_t j = 0; j < den.terms.size(); ++j) {
    gp::Posynomial single;
    single.terms.push_back(den.terms[j]);
    betas[j] = single.evaluate(x);
    total += betas[j];
  }
  for (double& b : betas) b /= total;
  return betas;
}

Algo2Result run_from_start(const Problem3& problem, const OptSpec& spec,
                           const std::vector<double>& start) {
  Algo2Result result;
  result.status = OptStatus::kSolved;
  std::vector<double> x = start;
  double energy = problem.objective_value(x);
  result.history.push_back(
      IterateRecord{0, x, ratio_betas(problem, x), energy});

  for (int t = 1; t <= spec.max_outer_iterations; ++t) {
    const gp::GeometricProgram approx = build_approx_gp(problem, x);
    const auto solved =
        gp::solve(approx, x, {spec.solver_tolerance, 500});
    if (solved.status == gp::SolveStatus::kInfeasible) {
      result.status = OptStatus::kSolverFailure;
      break;
    }
    const double new_energy = problem.objective_value(solved.point);
    if (!(new_energy <= energy) ||
        problem.max_violation(solved.point) > kFeasibilityMargin) {
      // The previous iterate stays; the inner approximation cannot improve.
      break;
    }
    x = solved.point;
    const double change = (energy - new_energy) / std::max(energy, 1e-300);
    energy = new_energy;
    result.iterations = t;
    result.history.push_back(
        IterateRecord{t, x, ratio_betas(problem, x), energy});
    if (change <= spec.outer_tolerance) break;
  }
  result.point = x;
  result.energy = energy;
  result.kkt_residual = kkt_residual(problem, x);
  return result;
}

}  // namespace

Algo2Result run_algorithm2(const Problem3& problem, const OptSpec& spec,
                           std::span<const std::vector<double>> extra_starts) {
  const auto init = find_feasible_init(problem);
  std::vector<std::vector<double>> starts;
  if (init) starts.push_back(*init);
  for (const auto& s : extra_starts) {
    if (s.size() != problem.variables.size()) continue;
    // A start that sits on a constraint boundary is pulled inward by
    // shaving global iterations (time and energy shrink with K0).
    std::vector<double> candidate = s;
    const std::size_t k0 = index_of(problem, "K0");
    for (double shrink : {1.0, 1.0 - 3e-7, 1.0 - 1e-5, 1.0 - 1e-4}) {
      candidate[k0] = std::max(1.0 + 1e-9, s[k0] * shrink);
      if (problem.max_violation(candidate) < -kFeasibilityMargin) {
        starts.push_back(candidate);
        break;
      }
    }
  }
  if (starts.empty()) {
    Algo2Result result;
    result.status = OptStatus::kInfeasible;
    return result;
  }
  Algo2Result best;
  bool have = false;
  for (const auto& start : starts) {
    Algo2Result run = run_from_start(problem, spec, start);
    if (run.status != OptStatus::kSolved) continue;
    if (!have || run.energy < best.energy) {
      best = std::move(run);
      have = true;
    }
  }
  if (!have) {
    Algo2Result result;
    result.status = OptStatus::kSolverFailure;
    return result;
  }
  return best;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Lawson-Hanson nonnegative least squares: min |A l - b|, l >= 0.
VectorXd nnls(const MatrixXd& A, const VectorXd& b) {
  const int m = static_cast<int>(A.cols());
  VectorXd lambda = VectorXd::Zero(m);
  std::vector<bool> passive(static_cast<std::size_t>(m), false);
  for (int outer = 0; outer < 4 * m + 8; ++outer) {
    const VectorXd w = A.transpose() * (b - A * lambda);
    int best = -1;
    double best_w = 1e-12;
    for (int i = 0; i < m; ++i) {
      if (!passive[static_cast<std::size_t>(i)] && w[i] > best_w) {
        best = i;
        best_w = w[i];
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    for (int inner = 0; inner < 4 * m + 8; ++inner) {
      std::vector<int> cols;
      for (int i = 0; i < m; ++i) {
        if (passive[static_cast<std::size_t>(i)]) cols.push_back(i);
      }
      MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) {
        Ap.col(static_cast<Eigen::Index>(c)) = A.col(cols[c]);
      }
      const VectorXd zp = Ap.colPivHouseholderQr().solve(b);
      bool all_positive = true;
      for (Eigen::Index c = 0; c < zp.size(); ++c) {
        if (zp[c] <= 0.0) {
          all_positive = false;
          break;
        }
      }
      if (all_positive) {
        lambda.setZero();
        for (std::size_t c = 0; c < cols.size(); ++c) lambda[cols[c]] = zp[c];
        break;
      }
      double alpha = 1.0;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const double zc = zp[static_cast<Eigen::Index>(c)];
        if (zc <= 0.0) {
          const double lc = lambda[cols[c]];
          alpha = std::min(alpha, lc / (lc - zc));
        }
      }
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const double zc = zp[static_cast<Eigen::Index>(c)];
        lambda[cols[c]] += alpha * (zc - lambda[cols[c]]);
        if (lambda[cols[c]] <= 1e-14) {
          lambda[cols[c]] = 0.0;
          passive[static_cast<std::size_t>(cols[c])] = false;
        }
      }
    }
  }
  return lambda;
}

// Gradient with respect to z = log x: d(value)/dz_i = x_i * d(value)/dx_i.
VectorXd log_space_gradient(std::span<const double> x,
                            const gp::Posynomial& p) {
  const std::size_t n = x.size();
  std::vector<double> grad(n, 0.0);
  p.accumulate_gradient(x, 1.0, grad);
  VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out[static_cast<Eigen::Index>(i)] = x[i] * grad[i];
  }
  return out;
}

VectorXd error_log_space_gradient(const Problem3& problem,
                                  std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> grad(n, 0.0);
  if (!problem.error_posy.terms.empty()) {
    problem.error_posy.accumulate_gradient(x, 1.0, grad);
  }
  for (const auto& ratio : problem.error_ratios) {
    const double num = ratio.numerator.evaluate(x);
    const double den = ratio.denominator.evaluate(x);
    ratio.numerator.accumulate_gradient(x, 1.0 / den, grad);
    ratio.denominator.accumulate_gradient(x, -num / (den * den), grad);
  }
  VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out[static_cast<Eigen::Index>(i)] = x[i] * grad[i];
  }
  return out;
}

}  // namespace

double kkt_residual(const Problem3& problem, std::span<const double> point) {
  constexpr double kActivityTol = 1e-7;
  const std::size_t n = point.size();
  const double objective = problem.objective_value(point);
  VectorXd g0 = log_space_gradient(point, problem.objective) / objective;

  std::vector<std::pair<double, VectorXd>> active;  // (log value, gradient)
  auto consider = [&](double value, const VectorXd& grad_of_value) {
    const double log_value = std::log(value);
    if (log_value >= -kActivityTol) {
      active.emplace_back(log_value, grad_of_value / value);
    }
  };
  for (const auto& c : problem.epigraph_monomials) {
    consider(c.evaluate(point), log_space_gradient(point, c));
  }
  for (const auto& c : problem.bound_monomials) {
    consider(c.evaluate(point), log_space_gradient(point, c));
  }
  consider(problem.time_constraint.evaluate(point),
           log_space_gradient(point, problem.time_constraint));
  consider(problem.error_value(point) / problem.error_limit,
           error_log_space_gradient(problem, point) / problem.error_limit);

  if (active.empty()) {
    return g0.norm() / (1.0 + g0.norm());
  }
  MatrixXd A(static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) {
    A.col(static_cast<Eigen::Index>(k)) = active[k].second;
  }
  const VectorXd lambda = nnls(A, -g0);
  const VectorXd residual = g0 + A * lambda;
  double slack_violation = 0.0;
  for (std::size_t k = 0; k < active.size(); ++k) {
    slack_violation +=
        lambda[static_cast<Eigen::Index>(k)] * std::abs(active[k].first);
  }
  return residual.norm() / (1.0 + g0.norm()) + slack_violation;
}

ContinuousPoint to_full_point(const Problem3& problem,
                              std::span<const double> reduced,
                              const OptSpec& spec) {
  const std::size_t workers = spec.profile.workers.size();
  ContinuousPoint out;
  out.local_iters.resize(workers, 1.0);
  const auto value = [&](const std::string& name) {
    return reduced[index_of(problem, name)];
  };
  out.global_iters = value("K0");
  out.t1 = value("T1");
  out.t2 = value("T2");
  switch (problem.mode) {
    case Mode::kGenqsgd:
      for (std::size_t nn = 0; nn < workers; ++nn) {
        out.local_iters[nn] = value("K" + std::to_string(nn + 1));
      }
      out.batch = value("B");
      break;
    case Mode::kPsgd:
      out.batch = value("B");
      break;
    case Mode::kPrsgd:
      for (std::size_t nn = 0; nn < workers; ++nn) {
        out.local_iters[nn] = value("K" + std::to_string(nn + 1));
      }
      out.batch = 1.0;
      break;
    case Mode::kFedpaq: {
      const double shared = value("K");
      for (double& k : out.local_iters) k = shared;
      out.batch = value("B");
      break;
    }
    case Mode::kFedavg:
      out.batch = value("B");
      for (std::size_t nn = 0; nn < workers; ++nn) {
        out.local_iters[nn] = static_cast<double>(problem.fedavg_m) *
                              spec.worker_samples[nn] / out.batch;
      }
      break;
  }
  return out;
}

cost::ContinuousParams to_params(const ContinuousPoint& point) {
  return cost::ContinuousParams{point.global_iters, point.local_iters,
                                point.batch};
}

namespace {

std::vector<double> full_vector_from_point(const ContinuousPoint& point,
                                           const OptSpec& spec) {
  const std::size_t workers = spec.profile.workers.size();
  std::vector<double> x;
  x.reserve(workers + 4);
  // Boundary values (a PR-SGD solution has B = 1 exactly) are nudged into
  // the interior so the barrier method can start from them.
  x.push_back(std::max(point.global_iters, 1.0 + 1e-7));
  for (double k : point.local_iters) x.push_back(k);
  x.push_back(std::max(point.batch, 1.0 + 1e-7));
  // Re-derive the epigraph variables with a little headroom.
  double t1 = 0.0, t2 = 0.0;
  for (std::size_t n = 0; n < workers; ++n) {
    t1 = std::max(t1, spec.profile.workers[n].compute_time() *
                          point.local_iters[n]);
    t2 = std::max(t2, point.local_iters[n]);
  }
  x.push_back(t1 * (1.0 + 1e-7));
  x.push_back(t2 * (1.0 + 1e-7));
  return x;
}

}  // namespace

ModeResult optimize_mode(const OptSpec& spec, Mode mode,
                         std::span<const ContinuousPoint> warm_starts) {
  ModeResult out;
  out.mode = mode;
  if (mode == Mode::kFedavg) {
    if (spec.worker_samples.size() != spec.profile.workers.size()) {
      throw std::invalid_argument(
          "fedavg mode requires per-worker sample counts");
    }
    double upload_time = 0.0;
    for (const auto& w : spec.profile.workers) {
      upload_time = std::max(upload_time, w.transmit_time());
    }
    const double fixed_time = spec.profile.server.compute_time() +
                              upload_time +
                              spec.profile.server.transmit_time();
    bool have = false;
    for (int m = 1; m <= 64; ++m) {
      double compute = 0.0;
      for (std::size_t n = 0; n < spec.profile.workers.size(); ++n) {
        compute = std::max(compute, spec.profile.workers[n].compute_time() *
                                        m * spec.worker_samples[n]);
      }
      if (compute + fixed_time > spec.time_limit) break;  // K0 >= 1
      const Problem3 p3 = build_mode_problem(spec, mode, m);
      const Algo2Result run = run_algorithm2(p3, spec);
      if (run.status != OptStatus::kSolved) continue;
      if (!have || run.energy < out.energy) {
        have = true;
        out.status = OptStatus::kSolved;
        out.energy = run.energy;
        out.point = to_full_point(p3, run.point, spec);
        out.kkt_residual = run.kkt_residual;
        out.iterations = run.iterations;
        out.fedavg_m = m;
      }
    }
    if (!have) out.status = OptStatus::kInfeasible;
    return out;
  }

  const Problem3 p3 = build_mode_problem(spec, mode);
  std::vector<std::vector<double>> starts;
  if (mode == Mode::kGenqsgd) {
    for (const auto& w : warm_starts) {
      starts.push_back(full_vector_from_point(w, spec));
    }
  }
  const Algo2Result run = run_algorithm2(p3, spec, starts);
  out.status = run.status;
  if (run.status == OptStatus::kSolved) {
    out.energy = run.energy;
    out.point = to_full_point(p3, run.point, spec);
    out.kkt_residual = run.kkt_residual;
    out.iterations = run.iterations;
  }
  return out;
}

std::optional<engine::AlgoParams> round_to_integer(const OptSpec& spec,
                                                   const ContinuousPoint& point) {
  const std::size_t workers = spec.profile.workers.size();
  const std::size_t dims = workers + 2;  // K0, K_n..., B
  std::vector<double> values;
  values.push_back(point.global_iters);
  for (double k : point.local_iters) values.push_back(k);
  values.push_back(point.batch);

  double max_batch = std::numeric_limits<double>::infinity();
  if (!spec.worker_samples.empty()) {
    max_batch = *std::min_element(spec.worker_samples.begin(),
                                  spec.worker_samples.end());
  }

  const auto feasible_energy =
      [&](const engine::AlgoParams& params) -> std::optional<double> {
    cost::ContinuousParams cp;
    cp.global_iters = static_cast<double>(params.global_iters);
    cp.batch = static_cast<double>(params.batch);
    for (std::int64_t k : params.local_iters) {
      cp.local_iters.push_back(static_cast<double>(k));
    }
    if (cp.batch > max_batch) return std::nullopt;
    if (cost::time_cost(cp, spec.profile) > spec.time_limit) return std::nullopt;
    if (cost::conv_error(cp, spec.profile, spec.constants) > spec.error_limit) {
      return std::nullopt;
    }
    return cost::energy_cost(cp, spec.profile);
  };

  const auto params_from = [&](const std::vector<std::int64_t>& v) {
    engine::AlgoParams params;
    params.global_iters = v[0];
    params.local_iters.assign(v.begin() + 1, v.end() - 1);
    params.batch = v.back();
    return params;
  };

  if (dims <= 12) {
    std::vector<std::pair<std::int64_t, std::int64_t>> choices(dims);
    for (std::size_t i = 0; i < dims; ++i) {
      const auto lo = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::floor(values[i])));
      const auto hi =
          std::max(lo, static_cast<std::int64_t>(std::ceil(values[i])));
      choices[i] = {lo, hi};
    }
    std::optional<engine::AlgoParams> best;
    double best_energy = std::numeric_limits<double>::infinity();
    std::vector<std::int64_t> v(dims);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << dims); ++mask) {
      for (std::size_t i = 0; i < dims; ++i) {
        v[i] = (mask >> i) & 1 ? choices[i].second : choices[i].first;
      }
      const auto params = params_from(v);
      const auto energy = feasible_energy(params);
      if (energy && *energy < best_energy) {
        best_energy = *energy;
        best = params;
      }
    }
    return best;
  }

  // Large N: round locals up, then walk B and K0 down until feasible.
  std::vector<std::int64_t> v(dims);
  for (std::size_t i = 0; i < dims; ++i) {
    v[i] = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(values[i])));
  }
  for (int repair = 0; repair < 4096; ++repair) {
    const auto params = params_from(v);
    if (feasible_energy(params)) return params;
    // Prefer the move that most reduces the worst violation.
    std::optional<std::size_t> move;
    double best_violation = std::numeric_limits<double>::infinity();
    for (std::size_t i : {dims - 1, std::size_t{0}}) {
      if (v[i] <= 1) continue;
      --v[i];
      cost::ContinuousParams cp;
      cp.global_iters = static_cast<double>(v[0]);
      cp.batch = static_cast<double>(v.back());
      for (std::size_t k = 1; k + 1 < dims; ++k) {
        cp.local_iters.push_back(static_cast<double>(v[k]));
      }
      const double violation = std::max(
          cost::time_cost(cp, spec.profile) / spec.time_limit,
          cost::conv_error(cp, spec.profile, spec.constants) /
              spec.error_limit);
      if (violation < best_violation) {
        best_violation = violation;
        move = i;
      }
      ++v[i];
    }
    if (!move) return std::nullopt;
    --v[*move];
  }
  return std::nullopt;
}

GridResult grid_oracle(const OptSpec& spec, int resolution, int stages) {
  const int workers = spec.profile.worker_count();
  if (workers > 3) {
    throw std::invalid_argument("grid_oracle: limited to N <= 3");
  }
  if (resolution < 8) {
    throw std::invalid_argument("grid_oracle: resolution too small");
  }
  const std::size_t axes = static_cast<std::size_t>(workers) + 2;
  double max_batch = 1e6;
  if (!spec.worker_samples.empty()) {
    max_batch = std::min(max_batch,
                         *std::min_element(spec.worker_samples.begin(),
                                           spec.worker_samples.end()));
  }
  std::vector<std::pair<double, double>> bounds(axes);
  bounds[0] = {1.0, 1e6};  // K0
  for (int n = 0; n < workers; ++n) {
    bounds[static_cast<std::size_t>(n) + 1] = {1e-2, 1e6};
  }
  bounds[axes - 1] = {1.0, max_batch};  // B

  const std::vector<std::pair<double, double>> outer_bounds = bounds;

  GridResult best;
  cost::ContinuousParams params;
  params.local_iters.resize(static_cast<std::size_t>(workers));

  for (int stage = 0; stage < stages; ++stage) {
    std::vector<std::vector<double>> grids(axes);
    for (std::size_t a = 0; a < axes; ++a) {
      grids[a] = logspace(bounds[a].first, bounds[a].second, resolution);
    }
    std::vector<std::size_t> index(axes, 0);
    const auto evaluate_leaf = [&]() {
      params.global_iters = grids[0][index[0]];
      for (int n = 0; n < workers; ++n) {
        params.local_iters[static_cast<std::size_t>(n)] =
            grids[static_cast<std::size_t>(n) + 1]
                 [index[static_cast<std::size_t>(n) + 1]];
      }
      params.batch = grids[axes - 1][index[axes - 1]];
      if (cost::time_cost(params, spec.profile) > spec.time_limit) return;
      if (cost::conv_error(params, spec.profile, spec.constants) >
          spec.error_limit) {
        return;
      }
      const double energy = cost::energy_cost(params, spec.profile);
      if (!best.feasible || energy < best.energy) {
        best.feasible = true;
        best.energy = energy;
        best.params = params;
      }
    };
    // Odometer loop over all grid points.
    while (true) {
      evaluate_leaf();
      std::size_t a = 0;
      while (a < axes && ++index[a] == grids[a].size()) {
        index[a] = 0;
        ++a;
      }
      if (a == axes) break;
    }
    if (!best.feasible) return best;  // infeasible everywhere

    // Zoom one grid step around the incumbent.
    std::vector<double> center;
    center.push_back(best.params.global_iters);
    for (double k : best.params.local_iters) center.push_back(k);
    center.push_back(best.params.batch);
    for (std::size_t a = 0; a < axes; ++a) {
      const double step = std::pow(bounds[a].second / bounds[a].first,
                                   1.0 / (resolution - 1));
      bounds[a] = {std::max(outer_bounds[a].first, center[a] / step),
                   std::min(outer_bounds[a].second, center[a] * step)};
    }
  }
  return best;
}

std::vector<SweepRow> run_sweep(const OptSpec& base, SweepAxis axis,
                                std::span<const double> values,
                                std::span<const Mode> modes, int jobs) {
  std::vector<std::vector<SweepRow>> per_value(values.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&]() {
    try {
      while (true) {
        const std::size_t v = next.fetch_add(1);
        if (v >= values.size()) break;
        OptSpec spec = base;
        if (axis == SweepAxis::kCmax) {
          spec.error_limit = values[v];
        } else {
          spec.time_limit = values[v];
        }
        std::vector<ModeResult> results(modes.size());
        std::vector<ContinuousPoint> warm;
        for (std::size_t m = 0; m < modes.size(); ++m) {
          if (modes[m] == Mode::kGenqsgd) continue;
          results[m] = optimize_mode(spec, modes[m]);
          if (results[m].status == OptStatus::kSolved) {
            warm.push_back(results[m].point);
          }
        }
        for (std::size_t m = 0; m < modes.size(); ++m) {
          if (modes[m] != Mode::kGenqsgd) continue;
          results[m] = optimize_mode(spec, modes[m], warm);
          // Every baseline point is GenQSGD-feasible (same quantization,
          // fewer structural degrees of freedom), so the best baseline is
          // always an admissible fallback solution.
          for (std::size_t o = 0; o < modes.size(); ++o) {
            if (modes[o] == Mode::kGenqsgd ||
                results[o].status != OptStatus::kSolved) {
              continue;
            }
            if (results[m].status != OptStatus::kSolved ||
                results[o].energy < results[m].energy) {
              results[m].status = OptStatus::kSolved;
              results[m].energy = results[o].energy;
              results[m].point = results[o].point;
              results[m].kkt_residual = results[o].kkt_residual;
            }
          }
        }
        auto& rows = per_value[v];
        for (std::size_t m = 0; m < modes.size(); ++m) {
          rows.push_back(SweepRow{values[v], modes[m], results[m].status,
                                  results[m].status == OptStatus::kSolved
                                      ? results[m].energy
                                      : 0.0});
        }
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  const int thread_count = std::clamp<int>(jobs, 1,
                                           static_cast<int>(values.size()));
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<SweepRow> rows;
  for (const auto& group : per_value) {
    rows.insert(rows.end(), group.begin(), group.end());
  }
  return rows;
}

}  // namespace fedopt::opt
