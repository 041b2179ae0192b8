#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedopt/cost_model.hpp"
#include "fedopt/fl_engine.hpp"
#include "fedopt/gp.hpp"

namespace fedopt::opt {

/// Inputs of the parameter-optimization problem: minimize energy subject
/// to a time limit and a convergence-error limit.
struct OptSpec {
  double time_limit = 0.0;   // T_max, seconds
  double error_limit = 0.0;  // C_max
  cost::SystemProfile profile;
  cost::LearnConstants constants;
  double solver_tolerance = 1e-8;
  double outer_tolerance = 1e-8;
  int max_outer_iterations = 200;
  /// Per-worker sample counts. Optional; enables the FedAvg structural
  /// mode and the B <= min I_n cap.
  std::vector<double> worker_samples;
};

/// Structural families the pipeline can optimize. Baselines share the
/// system's quantization configuration and differ only in how (K, B) is
/// constrained, so each baseline's feasible set is a subset of GenQSGD's.
enum class Mode { kGenqsgd, kFedavg, kPrsgd, kPsgd, kFedpaq };
const char* mode_name(Mode mode);

/// The differentiable equivalent problem: epigraph variables T1, T2 for
/// the two max terms, monomial constraints tying them, the posynomial time
/// constraint, and the error constraint kept in posynomial-ratio form.
struct Problem3 {
  Mode mode = Mode::kGenqsgd;
  int fedavg_m = 0;
  std::vector<std::string> variables;
  gp::Posynomial objective;  // E(K, B)
  /// The 2N monomials tying T1 and T2 to the per-worker maxima.
  std::vector<gp::Posynomial> epigraph_monomials;
  /// Monomial bounds: K0 >= 1, B >= 1 and (when sample counts are known)
  /// B <= min_n I_n. The integer problem implies the first two; keeping
  /// them in the relaxation rules out sub-one "fractional rounds".
  std::vector<gp::Posynomial> bound_monomials;
  gp::Posynomial time_constraint;  // already divided by T_max, <= 1

  struct Ratio {
    gp::Posynomial numerator;
    gp::Posynomial denominator;
  };
  gp::Posynomial error_posy;        // c2*T2^2 + c3/B
  std::vector<Ratio> error_ratios;  // c1/(K0*sum K), noise/(sum K)
  double error_limit = 0.0;
  bool trivially_infeasible = false;

  double objective_value(std::span<const double> x) const;
  double error_value(std::span<const double> x) const;
  /// max over all constraints of (value - bound); negative inside.
  double max_violation(std::span<const double> x) const;
};

/// Problem 3 for GenQSGD (full variable set K0, K_1..K_N, B, T1, T2).
Problem3 build_equivalent_problem(const OptSpec& spec);
/// Problem 3 after substituting a mode's structural constraints.
Problem3 build_mode_problem(const OptSpec& spec, Mode mode, int fedavg_m = 1);

/// The inner-approximating GP at an expansion point: every ratio
/// denominator is replaced by its arithmetic-geometric-mean monomial
/// lower bound, tight (in value and gradient) at the expansion point.
gp::GeometricProgram build_approx_gp(const Problem3& problem,
                                     std::span<const double> expansion);

/// A strictly feasible point, or nothing. Deterministic: balanced-point
/// candidate sweep, then a phase-I slack-minimization GP loop.
std::optional<std::vector<double>> find_feasible_init(const Problem3& problem);

enum class OptStatus { kSolved, kInfeasible, kSolverFailure };

struct IterateRecord {
  int iteration = 0;
  std::vector<double> point;
  std::vector<double> beta;  // AGM weights K_n / sum K at this iterate
  double energy = 0.0;
};

struct Algo2Result {
  OptStatus status = OptStatus::kInfeasible;
  std::vector<double> point;  // over the problem's variables
  double energy = 0.0;
  std::vector<IterateRecord> history;
  double kkt_residual = 0.0;
  int iterations = 0;
};

/// The successive-GP loop: solve the approximate GP, re-expand at the
/// solution, repeat until the relative objective change falls below
/// outer_tolerance. The objective sequence is non-increasing.
Algo2Result run_algorithm2(const Problem3& problem, const OptSpec& spec,
                           std::span<const std::vector<double>> extra_starts = {});

/// Stationarity + complementary-slackness residual of Problem 3 at a
/// point, via nonnegative least-squares multipliers over the active
/// constraints, in log-space.
double kkt_residual(const Problem3& problem, std::span<const double> point);

/// A full-space solution point (all modes translated back to GenQSGD
/// coordinates).
struct ContinuousPoint {
  double global_iters = 0.0;
  std::vector<double> local_iters;
  double batch = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
};
ContinuousPoint to_full_point(const Problem3& problem,
                              std::span<const double> reduced,
                              const OptSpec& spec);
cost::ContinuousParams to_params(const ContinuousPoint& point);

struct ModeResult {
  Mode mode = Mode::kGenqsgd;
  OptStatus status = OptStatus::kInfeasible;
  ContinuousPoint point;
  double energy = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  int fedavg_m = 0;
};

/// Run the pipeline for one mode. For FedAvg the integer pass multiplier
/// m is searched upward until the time limit cannot be met. GenQSGD
/// accepts warm starts (e.g. baseline solutions) as extra initials.
ModeResult optimize_mode(const OptSpec& spec, Mode mode,
                         std::span<const ContinuousPoint> warm_starts = {});

/// Exhaustive-refinement integer recovery: all floor/ceil neighbors when
/// the dimension allows, feasibility checked by direct evaluation.
std::optional<engine::AlgoParams> round_to_integer(const OptSpec& spec,
                                                   const ContinuousPoint& point);

/// Brute-force zoomed grid search over (K0, K_n, B); N <= 3 only.
struct GridResult {
  bool feasible = false;
  cost::ContinuousParams params;
  double energy = 0.0;
};
GridResult grid_oracle(const OptSpec& spec, int resolution = 50, int stages = 6);

enum class SweepAxis { kCmax, kTmax };
struct SweepRow {
  double axis_value = 0.0;
  Mode mode = Mode::kGenqsgd;
  OptStatus status = OptStatus::kInfeasible;
  double energy = 0.0;
};
/// One optimizer run per (axis value, mode); GenQSGD is warm-started from
/// every feasible baseline solution at the same point. `jobs` axis values
/// run concurrently; results are ordered by (value index, mode) regardless.
std::vector<SweepRow> run_sweep(const OptSpec& base, SweepAxis axis,
                                std::span<const double> values,
                                std::span<const Mode> modes, int jobs = 1);

}  // namespace fedopt::opt
