#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedopt/gp.hpp"
#include "fedopt/rng.hpp"
#include "oracles/gp_first_order.hpp"

using namespace fedopt::gp;
using fedopt::Rng;

namespace {

Monomial mono(double coef, std::vector<double> exps) {
  return Monomial{coef, std::move(exps)};
}

Posynomial posy(std::vector<Monomial> terms) {
  Posynomial p;
  p.terms = std::move(terms);
  return p;
}

// Random GP with a coercive objective and constraints strictly feasible at
// the all-ones point.
GeometricProgram random_gp(Rng& rng, int vars, int cons) {
  GeometricProgram gp;
  for (int i = 0; i < vars; ++i) gp.variables.push_back("x" + std::to_string(i));
  const auto random_posy = [&](int max_terms) {
    Posynomial p;
    const int terms = 1 + static_cast<int>(rng.next_below(
                              static_cast<std::uint64_t>(max_terms)));
    for (int t = 0; t < terms; ++t) {
      Monomial m;
      m.coefficient = std::exp(2.0 * rng.next_unit() - 1.0);
      m.exponents.resize(static_cast<std::size_t>(vars));
      for (auto& e : m.exponents) e = std::round(4.0 * rng.next_unit() - 2.0);
      p.terms.push_back(std::move(m));
    }
    return p;
  };
  gp.objective = random_posy(3);
  // coercivity: every variable appears with both signs
  for (int i = 0; i < vars; ++i) {
    std::vector<double> up(static_cast<std::size_t>(vars), 0.0);
    std::vector<double> down = up;
    up[static_cast<std::size_t>(i)] = 1.0;
    down[static_cast<std::size_t>(i)] = -1.0;
    gp.objective.terms.push_back(mono(0.05, up));
    gp.objective.terms.push_back(mono(0.05, down));
  }
  for (int c = 0; c < cons; ++c) {
    Posynomial p = random_posy(3);
    const std::vector<double> ones(static_cast<std::size_t>(vars), 1.0);
    gp.constraints.push_back(p.scaled(0.5 / p.evaluate(ones)));
  }
  return gp;
}

}  // namespace

TEST_CASE("posynomial evaluation") {
  const Posynomial triple = posy({mono(3.0, {1.0})});
  const std::vector<double> two{2.0};
  CHECK(triple.evaluate(two) == 6.0);
  const Posynomial sym = posy({mono(1.0, {1.0}), mono(1.0, {-1.0})});
  const std::vector<double> one{1.0};
  CHECK(sym.evaluate(one) == 2.0);
  const std::vector<double> zero{0.0};
  CHECK_THROWS_AS(sym.evaluate(zero), std::invalid_argument);
}

TEST_CASE("remap rewrites variables as monomials") {
  // p = 2 x0^2 x1 over (x0, x1); substitute x0 = 3 y^-1, x1 = y.
  const Posynomial p = posy({mono(2.0, {2.0, 1.0})});
  const std::vector<Monomial> replacement{mono(3.0, {-1.0}), mono(1.0, {1.0})};
  const Posynomial q = remap(p, replacement, 1);
  REQUIRE(q.terms.size() == 1);
  CHECK(q.terms[0].coefficient == doctest::Approx(18.0));
  CHECK(q.terms[0].exponents == std::vector<double>{-1.0});
  const std::vector<double> y{2.0};
  CHECK(q.evaluate(y) == doctest::Approx(9.0));
}

TEST_CASE("convex form of a monomial is affine") {
  GeometricProgram gp;
  gp.variables = {"x", "y"};
  gp.objective = posy({mono(5.0, {2.0, -1.0})});
  const ConvexForm form = to_convex_form(gp);
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    const std::vector<double> z{rng.next_gaussian(), rng.next_gaussian()};
    CHECK(form.objective.value(z) ==
          doctest::Approx(std::log(5.0) + 2.0 * z[0] - z[1]).epsilon(1e-12));
  }
}

TEST_CASE("convex form of x + 1/x has its minimum log 2 at zero") {
  GeometricProgram gp;
  gp.variables = {"x"};
  gp.objective = posy({mono(1.0, {1.0}), mono(1.0, {-1.0})});
  const ConvexForm form = to_convex_form(gp);
  const std::vector<double> zero{0.0};
  CHECK(form.objective.value(zero) == doctest::Approx(std::log(2.0)));
  std::vector<double> grad(1);
  form.objective.gradient(zero, grad);
  CHECK(std::abs(grad[0]) < 1e-14);
}

TEST_CASE("convex-form gradients match finite differences") {
  Rng rng(99);
  const GeometricProgram gp = random_gp(rng, 4, 3);
  const ConvexForm form = to_convex_form(gp);
  std::vector<double> grad(4), probe(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(4);
    for (auto& v : z) v = rng.next_gaussian() * 0.5;
    const auto check_fn = [&](const ConvexFunction& f) {
      f.gradient(z, grad);
      for (int i = 0; i < 4; ++i) {
        const double h = 1e-6;
        probe = z;
        probe[static_cast<std::size_t>(i)] += h;
        const double up = f.value(probe);
        probe[static_cast<std::size_t>(i)] -= 2.0 * h;
        const double down = f.value(probe);
        const double fd = (up - down) / (2.0 * h);
        CHECK(grad[static_cast<std::size_t>(i)] ==
              doctest::Approx(fd).epsilon(1e-6));
      }
    };
    check_fn(form.objective);
    for (const auto& c : form.constraints) check_fn(c);
  }
}

TEST_CASE("two active monomial constraints pin the solution") {
  GeometricProgram gp;
  gp.variables = {"x", "y"};
  gp.objective = posy({mono(1.0, {-1.0, -1.0})});
  gp.constraints.push_back(posy({mono(0.5, {1.0, 0.0})}));
  gp.constraints.push_back(posy({mono(1.0 / 3.0, {0.0, 1.0})}));
  const SolveResult res = solve(gp);
  REQUIRE(res.status == SolveStatus::kSolved);
  CHECK(res.point[0] == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(res.point[1] == doctest::Approx(3.0).epsilon(1e-5));
  CHECK(res.value == doctest::Approx(1.0 / 6.0).epsilon(1e-6));
  CHECK(res.stationarity_residual <= 1e-8);
  CHECK(res.complementary_slackness <= 1e-6);
}

TEST_CASE("unconstrained AM-GM minimum") {
  GeometricProgram gp;
  gp.variables = {"x"};
  gp.objective = posy({mono(1.0, {1.0}), mono(1.0, {-1.0})});
  const SolveResult res = solve(gp);
  REQUIRE(res.status == SolveStatus::kSolved);
  CHECK(res.point[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(res.value == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("matches a first-order reference on random programs") {
  Rng rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    const int vars = 2 + static_cast<int>(rng.next_below(4));
    const int cons = 1 + static_cast<int>(rng.next_below(5));
    const GeometricProgram gp = random_gp(rng, vars, cons);
    const std::vector<double> ones(static_cast<std::size_t>(vars), 1.0);
    const SolveResult res = solve(gp, ones);
    REQUIRE(res.status == SolveStatus::kSolved);
    const double reference = oracle::solve_gp_reference(gp, ones);
    CHECK(std::abs(res.value - reference) <= 1e-5 * std::abs(reference));
    for (const auto& c : gp.constraints) {
      CHECK(c.evaluate(res.point) <= 1.0 + 1e-9);
    }
    CHECK(res.complementary_slackness <= 1e-6);
  }
}

TEST_CASE("objective scaling leaves the argmin unchanged") {
  Rng rng(55);
  const GeometricProgram gp = random_gp(rng, 3, 2);
  GeometricProgram scaled = gp;
  scaled.objective = gp.objective.scaled(37.5);
  const std::vector<double> ones(3, 1.0);
  const SolveResult a = solve(gp, ones);
  const SolveResult b = solve(scaled, ones);
  REQUIRE(a.status == SolveStatus::kSolved);
  REQUIRE(b.status == SolveStatus::kSolved);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(std::log(a.point[static_cast<std::size_t>(i)]) -
                   std::log(b.point[static_cast<std::size_t>(i)])) <= 1e-8);
  }
  CHECK(b.value == doctest::Approx(37.5 * a.value).epsilon(1e-9));
}

TEST_CASE("infeasible programs are reported") {
  GeometricProgram gp;
  gp.variables = {"x"};
  gp.objective = posy({mono(1.0, {1.0})});
  gp.constraints.push_back(posy({mono(2.0, {1.0})}));   // x <= 1/2
  gp.constraints.push_back(posy({mono(1.0, {-1.0})}));  // x >= 1
  const SolveResult res = solve(gp);
  CHECK(res.status == SolveStatus::kInfeasible);
}

TEST_CASE("phase one recovers from an infeasible start") {
  GeometricProgram gp;
  gp.variables = {"x", "y"};
  gp.objective = posy({mono(1.0, {1.0, 1.0})});
  gp.constraints.push_back(posy({mono(1.0, {-1.0, 0.0})}));  // x >= 1
  gp.constraints.push_back(posy({mono(1.0, {0.0, -1.0})}));  // y >= 1
  const std::vector<double> bad_start{0.01, 0.01};
  const SolveResult res = solve(gp, bad_start);
  REQUIRE(res.status == SolveStatus::kSolved);
  CHECK(res.point[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(res.point[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("json round trip") {
  Rng rng(8);
  const GeometricProgram gp = random_gp(rng, 3, 2);
  const auto j = to_json(gp);
  const GeometricProgram back = gp_from_json(j);
  CHECK(back.variables == gp.variables);
  REQUIRE(back.objective.terms.size() == gp.objective.terms.size());
  const std::vector<double> probe{1.3, 0.7, 2.1};
  CHECK(back.objective.evaluate(probe) ==
        doctest::Approx(gp.objective.evaluate(probe)).epsilon(1e-15));
  REQUIRE(back.constraints.size() == gp.constraints.size());
  for (std::size_t i = 0; i < back.constraints.size(); ++i) {
    CHECK(back.constraints[i].evaluate(probe) ==
          doctest::Approx(gp.constraints[i].evaluate(probe)).epsilon(1e-15));
  }
}
