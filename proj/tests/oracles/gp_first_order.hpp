#pragma once

// Slow reference solver for small geometric programs: log-barrier with
// plain backtracking gradient descent in log-space, run to a high
// iteration count. Shares only the posynomial evaluation with the main
// solver; no Newton steps, no phase transitions.

#include <cmath>
#include <limits>
#include <vector>

#include "fedopt/gp.hpp"

namespace oracle {

inline double barrier_value(const fedopt::gp::ConvexForm& form, double t,
                            const std::vector<double>& z) {
  double v = t * form.objective.value(z);
  for (const auto& c : form.constraints) {
    const double ci = c.value(z);
    if (ci >= 0.0) return std::numeric_limits<double>::infinity();
    v -= std::log(-ci);
  }
  return v;
}

inline double solve_gp_reference(const fedopt::gp::GeometricProgram& gp,
                                 const std::vector<double>& init,
                                 std::vector<double>* arg_out = nullptr) {
  const auto form = fedopt::gp::to_convex_form(gp);
  const std::size_t n = form.variable_count;
  std::vector<double> z(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) z[i] = std::log(init[i]);

  std::vector<double> grad(n), g(n), trial(n);
  for (double t = 1.0; t <= 2e9; t *= 5.0) {
    double step = 1.0;
    for (int iter = 0; iter < 30000; ++iter) {
      form.objective.gradient(z, grad);
      for (double& v : grad) v *= t;
      for (const auto& c : form.constraints) {
        const double ci = c.value(z);
        c.gradient(z, g);
        for (std::size_t i = 0; i < n; ++i) grad[i] += g[i] / (-ci);
      }
      double norm = 0.0;
      for (double v : grad) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-10 * t) break;

      const double base = barrier_value(form, t, z);
      step = std::min(step * 2.0, 1.0 / (1.0 + norm));
      bool moved = false;
      for (int back = 0; back < 80; ++back) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = z[i] - step * grad[i];
        const double v = barrier_value(form, t, trial);
        if (v < base - 1e-12 * std::abs(base)) {
          z = trial;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(z[i]);
  if (arg_out) *arg_out = x;
  return gp.objective.evaluate(x);
}

}  // namespace oracle
