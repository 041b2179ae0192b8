#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedopt::gp {

/// c * prod_i x_i^{a_i} with c > 0, exponents over a shared variable list.
struct Monomial {
  double coefficient = 1.0;
  std::vector<double> exponents;
};

/// Sum of monomials; all coefficients positive.
struct Posynomial {
  std::vector<Monomial> terms;

  double evaluate(std::span<const double> x) const;
  /// out += scale * d/dx evaluate(x)
  void accumulate_gradient(std::span<const double> x, double scale,
                           std::span<double> out) const;
  /// Multiply every coefficient.
  Posynomial scaled(double factor) const;
};

Posynomial operator+(const Posynomial& a, const Posynomial& b);

/// minimize objective(x) s.t. constraint_i(x) <= 1, x > 0.
struct GeometricProgram {
  std::vector<std::string> variables;
  Posynomial objective;
  std::vector<Posynomial> constraints;
};

/// Rewrite a posynomial over a new variable space. replacement[i] expresses
/// old variable i as a monomial over the new variables; an old monomial
/// x^e contributes coefficient replacement[i].coefficient^e and exponents
/// e * replacement[i].exponents.
Posynomial remap(const Posynomial& p, std::span<const Monomial> replacement,
                 std::size_t new_variable_count);

nlohmann::json to_json(const GeometricProgram& gp);
GeometricProgram gp_from_json(const nlohmann::json& j);

/// log-sum-exp of the affine forms (A z + b); the convex image of a
/// posynomial under x = exp(z).
struct ConvexFunction {
  std::vector<std::vector<double>> exponents;  // one row per term
  std::vector<double> log_coefficients;

  double value(std::span<const double> z) const;
  void gradient(std::span<const double> z, std::span<double> out) const;
  /// Dense Hessian, row-major n*n.
  void hessian(std::span<const double> z, std::span<double> out) const;
};

struct ConvexForm {
  std::size_t variable_count = 0;
  ConvexFunction objective;
  std::vector<ConvexFunction> constraints;  // each <= 0
};

ConvexForm to_convex_form(const GeometricProgram& gp);

enum class SolveStatus { kSolved, kInfeasible, kIterationLimit };

struct SolveResult {
  SolveStatus status = SolveStatus::kIterationLimit;
  std::vector<double> point;  // x-space, strictly positive
  double value = 0.0;
  double stationarity_residual = 0.0;
  std::vector<double> multipliers;        // convex-form constraint duals
  double complementary_slackness = 0.0;   // max_i multiplier_i * |F_i|
  int newton_steps = 0;
};

struct SolveOptions {
  double tolerance = 1e-8;    // stationarity residual of the convex form
  int max_newton_steps = 500;
};

/// Primal log-barrier interior-point method in log-space. `init` may be
/// empty (all-ones start); an infeasible start triggers a phase-I solve.
SolveResult solve(const GeometricProgram& gp, std::span<const double> init = {},
                  const SolveOptions& options = {});

}  // namespace fedopt::gp
