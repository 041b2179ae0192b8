#include "fedopt/gp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedopt::gp {
namespace {

void check_point(std::span<const double> x, std::size_t n) {
  if (x.size() != n) {
    throw std::invalid_argument("gp: point dimension mismatch");
  }
  for (double v : x) {
    if (!(v > 0.0)) {
      throw std::invalid_argument("gp: evaluation point must be strictly positive");
    }
  }
}

}  // namespace

double Posynomial::evaluate(std::span<const double> x) const {
  double total = 0.0;
  for (const Monomial& m : terms) {
    check_point(x, m.exponents.size());
    double value = m.coefficient;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (m.exponents[i] != 0.0) value *= std::pow(x[i], m.exponents[i]);
    }
    total += value;
  }
  return total;
}

void Posynomial::accumulate_gradient(std::span<const double> x, double scale,
                                     std::span<double> out) const {
  for (const Monomial& m : terms) {
    double value = m.coefficient;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (m.exponents[i] != 0.0) value *= std::pow(x[i], m.exponents[i]);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (m.exponents[i] != 0.0) {
        out[i] += scale * value * m.exponents[i] / x[i];
      }
    }
  }
}

Posynomial Posynomial::scaled(double factor) const {
  if (!(factor > 0.0)) {
    throw std::invalid_argument("gp: scale factor must be positive");
  }
  Posynomial result = *this;
  for (Monomial& m : result.terms) m.coefficient *= factor;
  return result;
}

Posynomial operator+(const Posynomial& a, const Posynomial& b) {
  Posynomial result = a;
  result.terms.insert(result.terms.end(), b.terms.begin(), b.terms.end());
  return result;
}

Posynomial remap(const Posynomial& p, std::span<const Monomial> replacement,
                 std::size_t new_variable_count) {
  Posynomial result;
  result.terms.reserve(p.terms.size());
  for (const Monomial& m : p.terms) {
    if (m.exponents.size() != replacement.size()) {
      throw std::invalid_argument("gp::remap: replacement size mismatch");
    }
    Monomial out;
    out.coefficient = m.coefficient;
    out.exponents.assign(new_variable_count, 0.0);
    for (std::size_t i = 0; i < replacement.size(); ++i) {
      const double e = m.exponents[i];
      if (e == 0.0) continue;
      const Monomial& rep = replacement[i];
      if (rep.exponents.size() != new_variable_count) {
        throw std::invalid_argument("gp::remap: replacement arity mismatch");
      }
      out.coefficient *= std::pow(rep.coefficient, e);
      for (std::size_t j = 0; j < new_variable_count; ++j) {
        out.exponents[j] += e * rep.exponents[j];
      }
    }
    result.terms.push_back(std::move(out));
  }
  return result;
}

namespace {

nlohmann::json posynomial_to_json(const Posynomial& p) {
  nlohmann::json terms = nlohmann::json::array();
  for (const Monomial& m : p.terms) {
    terms.push_back({{"coef", m.coefficient}, {"exponents", m.exponents}});
  }
  return {{"terms", terms}};
}

Posynomial posynomial_from_json(const nlohmann::json& j, std::size_t arity) {
  Posynomial p;
  for (const auto& t : j.at("terms")) {
    Monomial m;
    m.coefficient = t.at("coef").get<double>();
    m.exponents = t.at("exponents").get<std::vector<double>>();
    if (m.exponents.size() != arity) {
      throw std::invalid_argument("gp: term arity does not match variable list");
    }
    if (!(m.coefficient > 0.0)) {
      throw std::invalid_argument("gp: coefficients must be positive");
    }
    p.terms.push_back(std::move(m));
  }
  if (p.terms.empty()) {
    throw std::invalid_argument("gp: posynomial needs at least one term");
  }
  return p;
}

}  // namespace

nlohmann::json to_json(const GeometricProgram& gp) {
  nlohmann::json constraints = nlohmann::json::array();
  for (const Posynomial& c : gp.constraints) {
    constraints.push_back(posynomial_to_json(c));
  }
  return {{"variables", gp.variables},
          {"objective", posynomial_to_json(gp.objective)},
          {"constraints", constraints}};
}

GeometricProgram gp_from_json(const nlohmann::json& j) {
  GeometricProgram gp;
  gp.variables = j.at("variables").get<std::vector<std::string>>();
  gp.objective = posynomial_from_json(j.at("objective"), gp.variables.size());
  for (const auto& c : j.at("constraints")) {
    gp.constraints.push_back(posynomial_from_json(c, gp.variables.size()));
  }
  return gp;
}

double ConvexFunction::value(std::span<const double> z) const {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < exponents.size(); ++k) {
    double v = log_coefficients[k];
    for (std::size_t i = 0; i < z.size(); ++i) v += exponents[k][i] * z[i];
    best = std::max(best, v);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < exponents.size(); ++k) {
    double v = log_coefficients[k];
    for (std::size_t i = 0; i < z.size(); ++i) v += exponents[k][i] * z[i];
    sum += std::exp(v - best);
  }
  return best + std::log(sum);
}

void ConvexFunction::gradient(std::span<const double> z,
                              std::span<double> out) const {
  const double lse = value(z);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < exponents.size(); ++k) {
    double v = log_coefficients[k];
    for (std::size_t i = 0; i < z.size(); ++i) v += exponents[k][i] * z[i];
    const double w = std::exp(v - lse);
    for (std::size_t i = 0; i < z.size(); ++i) out[i] += w * exponents[k][i];
  }
}

void ConvexFunction::hessian(std::span<const double> z,
                             std::span<double> out) const {
  const std::size_t n = z.size();
  const double lse = value(z);
  std::vector<double> grad(n, 0.0);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < exponents.size(); ++k) {
    double v = log_coefficients[k];
    for (std::size_t i = 0; i < n; ++i) v += exponents[k][i] * z[i];
    const double w = std::exp(v - lse);
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] += w * exponents[k][i];
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += w * exponents[k][i] * exponents[k][j];
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] -= grad[i] * grad[j];
    }
  }
}

ConvexForm to_convex_form(const GeometricProgram& gp) {
  const std::size_t n = gp.variables.size();
  auto transform = [n](const Posynomial& p) {
    ConvexFunction f;
    for (const Monomial& m : p.terms) {
      if (m.exponents.size() != n) {
        throw std::invalid_argument("gp: term arity does not match variables");
      }
      if (!(m.coefficient > 0.0)) {
        throw std::invalid_argument("gp: coefficients must be positive");
      }
      f.exponents.push_back(m.exponents);
      f.log_coefficients.push_back(std::log(m.coefficient));
    }
    if (f.exponents.empty()) {
      throw std::invalid_argument("gp: empty posynomial");
    }
    return f;
  };
  ConvexForm form;
  form.variable_count = n;
  form.objective = transform(gp.objective);
  for (const Posynomial& c : gp.constraints) {
    form.constraints.push_back(transform(c));
  }
  return form;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Barrier {
  // psi_t(z) = F0(z) - (1/t) sum_i log(-F_i(z)); valid only when F_i < 0.
  // Scaled by 1/t so values and gradients stay O(1) along the whole path;
  // the gradient equals the KKT stationarity expression with multipliers
  // 1 / (t * (-F_i)).
  const ConvexForm& form;
  double t;

  bool strictly_feasible(const VectorXd& z, double margin = 0.0) const {
    for (const ConvexFunction& c : form.constraints) {
      if (c.value({z.data(), static_cast<std::size_t>(z.size())}) >= -margin) {
        return false;
      }
    }
    return true;
  }

  double value(const VectorXd& z) const {
    std::span<const double> zs{z.data(), static_cast<std::size_t>(z.size())};
    double v = form.objective.value(zs);
    for (const ConvexFunction& c : form.constraints) {
      const double ci = c.value(zs);
      if (ci >= 0.0) return std::numeric_limits<double>::infinity();
      v -= std::log(-ci) / t;
    }
    return v;
  }

  void derivatives(const VectorXd& z, VectorXd& grad, MatrixXd& hess) const {
    const auto n = z.size();
    std::span<const double> zs{z.data(), static_cast<std::size_t>(n)};
    std::vector<double> g(n), h(n * n);
    grad.setZero(n);
    hess.setZero(n, n);

    form.objective.gradient(zs, g);
    form.objective.hessian(zs, h);
    for (Eigen::Index i = 0; i < n; ++i) {
      grad[i] += g[i];
      for (Eigen::Index j = 0; j < n; ++j) hess(i, j) += h[i * n + j];
    }
    for (const ConvexFunction& c : form.constraints) {
      const double ci = c.value(zs);
      c.gradient(zs, g);
      c.hessian(zs, h);
      const double inv = 1.0 / (-ci);
      for (Eigen::Index i = 0; i < n; ++i) {
        grad[i] += inv * g[i] / t;
        for (Eigen::Index j = 0; j < n; ++j) {
          hess(i, j) += (inv * h[i * n + j] + inv * inv * g[i] * g[j]) / t;
        }
      }
    }
  }
};

// Damped Newton descent on the scaled barrier. Stops when the gradient
// norm falls below grad_tol (the gradient is the stationarity residual).
// Returns false if the step budget ran out.
bool center(const Barrier& barrier, VectorXd& z, double grad_tol,
            int& steps_left) {
  const auto n = z.size();
  VectorXd grad(n), dz(n);
  MatrixXd hess(n, n);
  while (steps_left > 0) {
    --steps_left;
    barrier.derivatives(z, grad, hess);
    if (grad.norm() <= grad_tol) return true;

    double ridge = 0.0;
    for (int attempt = 0; attempt < 12; ++attempt) {
      MatrixXd damped = hess;
      if (ridge > 0.0) damped.diagonal().array() += ridge;
      Eigen::LLT<MatrixXd> llt(damped);
      if (llt.info() == Eigen::Success) {
        dz = llt.solve(-grad);
        if (dz.allFinite() && grad.dot(dz) < 0.0) break;
      }
      ridge = (ridge == 0.0) ? 1e-10 * (1.0 + hess.trace() / n) : ridge * 100.0;
      dz.setZero();
    }
    if (dz.isZero(0.0)) return true;  // no usable direction; report converged

    const double decrement_sq = -grad.dot(dz);
    if (decrement_sq <= 1e-18) return true;  // numerical floor

    // Inside the quadratic-convergence region a full step is safe as long
    // as it stays interior; value-based line search would only compare
    // noise there.
    if (decrement_sq <= 1.0 / 16.0) {
      double step = 1.0;
      for (int ls = 0; ls < 60; ++ls) {
        VectorXd trial = z + step * dz;
        if (barrier.strictly_feasible(trial)) {
          z = trial;
          break;
        }
        step *= 0.5;
      }
      continue;
    }

    const double base = barrier.value(z);
    const double slope = grad.dot(dz);
    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      VectorXd trial = z + step * dz;
      const double v = barrier.value(trial);
      if (std::isfinite(v) && v <= base + 1e-4 * step * slope) {
        z = trial;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) return true;  // stuck at numerical floor
  }
  return false;
}

// Phase I: minimize s subject to F_i(z) <= s. Succeeds as soon as the
// iterate reaches s < 0 (a strictly feasible z).
bool phase_one(const ConvexForm& form, VectorXd& z, int& steps_left) {
  const auto n = z.size();
  const auto m = static_cast<Eigen::Index>(form.constraints.size());
  std::span<const double> zs{z.data(), static_cast<std::size_t>(n)};
  double s = -std::numeric_limits<double>::infinity();
  for (const ConvexFunction& c : form.constraints) {
    s = std::max(s, c.value(zs));
  }
  if (s < 0.0) return true;
  s += 1.0;

  VectorXd grad(n + 1), dz(n + 1);
  MatrixXd hess(n + 1, n + 1);
  std::vector<double> g(n), h(n * n);

  for (double t = 1.0; t <= 1e10; t *= 10.0) {
    while (steps_left > 0) {
      --steps_left;
      std::span<const double> zcur{z.data(), static_cast<std::size_t>(n)};
      grad.setZero();
      hess.setZero();
      grad[n] = t;
      for (const ConvexFunction& c : form.constraints) {
        const double gap = s - c.value(zcur);
        c.gradient(zcur, g);
        c.hessian(zcur, h);
        const double inv = 1.0 / gap;
        for (Eigen::Index i = 0; i < n; ++i) {
          grad[i] += inv * g[i];
          for (Eigen::Index j = 0; j < n; ++j) {
            hess(i, j) += inv * h[i * n + j] + inv * inv * g[i] * g[j];
          }
          hess(i, n) -= inv * inv * g[i];
          hess(n, i) -= inv * inv * g[i];
        }
        grad[n] -= inv;
        hess(n, n) += inv * inv;
      }
      if (grad.norm() <= 1e-9 * t) break;

      double ridge = 1e-12;
      Eigen::LLT<MatrixXd> llt;
      for (int attempt = 0; attempt < 12; ++attempt) {
        MatrixXd damped = hess;
        damped.diagonal().array() += ridge;
        llt.compute(damped);
        if (llt.info() == Eigen::Success) break;
        ridge *= 100.0;
      }
      if (llt.info() != Eigen::Success) break;
      dz = llt.solve(-grad);

      // keep s - F_i > 0 along the step
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        VectorXd ztrial = z + step * dz.head(n);
        const double strial = s + step * dz[n];
        std::span<const double> zt{ztrial.data(), static_cast<std::size_t>(n)};
        bool interior = true;
        for (const ConvexFunction& c : form.constraints) {
          if (c.value(zt) >= strial) {
            interior = false;
            break;
          }
        }
        if (interior) {
          z = ztrial;
          s = strial;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
      if (s < -1e-8) return true;
    }
    if (s < -1e-8) return true;
    if (static_cast<double>(m) / t < 1e-10) break;
    if (steps_left <= 0) break;
  }
  return s < 0.0;
}

}  // namespace

SolveResult solve(const GeometricProgram& gp, std::span<const double> init,
                  const SolveOptions& options) {
  const std::size_t n = gp.variables.size();
  if (n == 0) throw std::invalid_argument("gp::solve: no variables");
  const ConvexForm form = to_convex_form(gp);
  const std::size_t m = form.constraints.size();

  VectorXd z = VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (!init.empty()) {
    check_point(init, n);
    for (std::size_t i = 0; i < n; ++i) z[static_cast<Eigen::Index>(i)] = std::log(init[i]);
  }

  SolveResult result;
  int steps_left = options.max_newton_steps;

  auto finish = [&](SolveStatus status) {
    result.status = status;
    result.point.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      result.point[i] = std::exp(z[static_cast<Eigen::Index>(i)]);
    }
    result.value = gp.objective.evaluate(result.point);
    result.newton_steps = options.max_newton_steps - steps_left;
    return result;
  };

  if (m == 0) {
    Barrier barrier{form, 1.0};
    const bool done = center(barrier, z, 0.1 * options.tolerance, steps_left);
    VectorXd grad(z.size());
    MatrixXd hess(z.size(), z.size());
    barrier.derivatives(z, grad, hess);
    result.stationarity_residual = grad.norm();
    return finish(done ? SolveStatus::kSolved : SolveStatus::kIterationLimit);
  }

  {
    Barrier probe{form, 1.0};
    if (!probe.strictly_feasible(z)) {
      if (!phase_one(form, z, steps_left)) {
        return finish(SolveStatus::kInfeasible);
      }
    }
  }

  double t = 1.0;
  bool ran_out = false;
  while (true) {
    Barrier barrier{form, t};
    const bool last_stage = static_cast<double>(m) / t <= options.tolerance;
    if (!center(barrier, z, last_stage ? 0.1 * options.tolerance : 1e-6,
                steps_left)) {
      ran_out = true;
      break;
    }
    if (last_stage) break;
    t *= 10.0;
  }

  // Lagrange multipliers of the convex form from the final barrier point.
  std::span<const double> zs{z.data(), static_cast<std::size_t>(z.size())};
  VectorXd stat = VectorXd::Zero(z.size());
  std::vector<double> g(n);
  form.objective.gradient(zs, g);
  for (std::size_t i = 0; i < n; ++i) stat[static_cast<Eigen::Index>(i)] = g[i];
  result.multipliers.resize(m);
  result.complementary_slackness = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double ck = form.constraints[k].value(zs);
    const double lambda = 1.0 / (t * std::max(-ck, 1e-300));
    result.multipliers[k] = lambda;
    result.complementary_slackness =
        std::max(result.complementary_slackness, lambda * std::abs(ck));
    form.constraints[k].gradient(zs, g);
    for (std::size_t i = 0; i < n; ++i) {
      stat[static_cast<Eigen::Index>(i)] += lambda * g[i];
    }
  }
  result.stationarity_residual = stat.norm();
  return finish(ran_out ? SolveStatus::kIterationLimit : SolveStatus::kSolved);
}

}  // namespace fedopt::gp
