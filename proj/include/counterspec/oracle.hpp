// Copyright 2026 The counterspec authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "counterspec/problem.hpp"
#include "counterspec/solver.hpp"

// Brute-force machinery for the perturbation function p*(s): the optimal value
// of the program as a function of its slack vector. Everything here is
// independent of the saddle-point solver path it is used to check, except that
// the n > 2 fallback delegates to the fixed-slack solver and then cross-checks
// itself through weak duality. Desk-scale verification only.

namespace counterspec {

class OracleInconsistencyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class InsufficientGridError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class StencilError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class UndefinedDifficultyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// p*(s) at one slack vector. p_star == +inf marks an infeasible
/// specification, in which case x_star is absent.
struct PerturbationSample {
  Vector s;
  double p_star = std::numeric_limits<double>::infinity();
  std::optional<Vector> x_star;
  bool feasible() const { return std::isfinite(p_star); }
};

struct OracleConfig {
  enum class Method { kAuto, kGrid, kSolver };

  // Primal grid search (n <= 2): coarse scan over [box_lo, box_hi]^n, then
  // shrink the window around the incumbent by 10x per level until final_step.
  double box_lo = -5.0;
  double box_hi = 5.0;
  double coarse_step = 0.1;
  double final_step = 1e-7;
  double feasibility_tol = 1e-9;

  // Fixed-slack solver fallback (n > 2).
  SolverConfig fixed_slack{1e-3, 2000000, 1e-8, 100000};
  double duality_check_tol = 1e-4;
  double phase_one_tol = 1e-7;  // max violation accepted as "feasible"
  // The solve is chased in rounds; between rounds the value is accepted early
  // once x is feasible and the duality gap certifies it to gap_accept_tol.
  long round_iterations = 50000;
  double gap_accept_tol = 1e-6;

  Method method = Method::kAuto;
};

namespace detail {

struct GridScan {
  bool found_feasible = false;
  double best_value = std::numeric_limits<double>::infinity();
  Vector best_point;
  double min_violation = std::numeric_limits<double>::infinity();
  Vector min_violation_point;

  void absorb(const GridScan& other) {
    if (other.found_feasible &&
        (!found_feasible || other.best_value < best_value)) {
      found_feasible = true;
      best_value = other.best_value;
      best_point = other.best_point;
    }
    if (other.min_violation < min_violation) {
      min_violation = other.min_violation;
      min_violation_point = other.min_violation_point;
    }
  }
};

/// Exhaustive scan of a cartesian grid. Ties resolve to the first point in
/// ascending odometer order, so results are deterministic.
inline GridScan scan_box(const ConvexProgram& prog, const Vector& slack_pc, const Vector& lo,
                         const Vector& hi, double step, double feas_tol) {
  const int n = prog.dimension();
  std::vector<int> counts(static_cast<size_t>(n));
  long total = 1;
  for (int k = 0; k < n; ++k) {
    counts[static_cast<size_t>(k)] =
        static_cast<int>(std::floor((hi[k] - lo[k]) / step + 1e-9)) + 1;
    total *= counts[static_cast<size_t>(k)];
  }

  GridScan scan;
  std::vector<int> idx(static_cast<size_t>(n), 0);
  Vector z(n);
  for (long flat = 0; flat < total; ++flat) {
    for (int k = 0; k < n; ++k) z[k] = lo[k] + idx[static_cast<size_t>(k)] * step;

    double violation = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < prog.constraint_count(); ++i)
      violation =
          std::max(violation, prog.constraints[static_cast<size_t>(i)].value(z) - slack_pc[i]);

    if (violation <= feas_tol) {
      const double value = prog.objective.value(z);
      if (!scan.found_feasible || value < scan.best_value) {
        scan.found_feasible = true;
        scan.best_value = value;
        scan.best_point = z;
      }
    }
    if (violation < scan.min_violation) {
      scan.min_violation = violation;
      scan.min_violation_point = z;
    }

    for (int k = n - 1; k >= 0; --k) {
      if (++idx[static_cast<size_t>(k)] < counts[static_cast<size_t>(k)]) break;
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  return scan;
}

inline PerturbationSample p_star_grid(const ConvexProgram& prog, const Vector& s,
                                      const OracleConfig& cfg) {
  const int n = prog.dimension();
  const Vector slack_pc = prog.constraint_slacks(s);
  const Vector box_lo = Vector::Constant(n, cfg.box_lo);
  const Vector box_hi = Vector::Constant(n, cfg.box_hi);

  GridScan scan = scan_box(prog, slack_pc, box_lo, box_hi, cfg.coarse_step, cfg.feasibility_tol);
  double step = cfg.coarse_step;
  while (step > cfg.final_step) {
    const Vector center = scan.found_feasible ? scan.best_point : scan.min_violation_point;
    const Vector lo = (center.array() - 2.0 * step).max(box_lo.array());
    const Vector hi = (center.array() + 2.0 * step).min(box_hi.array());
    step /= 10.0;
    scan.absorb(scan_box(prog, slack_pc, lo, hi, step, cfg.feasibility_tol));
  }

  PerturbationSample sample;
  sample.s = s;
  if (scan.found_feasible) {
    sample.p_star = scan.best_value;
    sample.x_star = scan.best_point;
  }
  return sample;
}

/// Phase I: minimize sum_i [f_i(x) - s_{g(i)}]_+^2 to locate a feasible point
/// or certify that none exists.
inline std::pair<bool, Vector> phase_one(const ConvexProgram& prog, const Vector& slack_pc,
                                         const OracleConfig& cfg) {
  DifferentiableFunction violation{
      prog.dimension(),
      [&prog, &slack_pc](const Vector& x) {
        double acc = 0.0;
        for (int i = 0; i < prog.constraint_count(); ++i) {
          const double gap = prog.constraints[static_cast<size_t>(i)].value(x) - slack_pc[i];
          if (gap > 0.0) acc += gap * gap;
        }
        return acc;
      },
      [&prog, &slack_pc](const Vector& x) {
        Vector g = Vector::Zero(prog.dimension());
        for (int i = 0; i < prog.constraint_count(); ++i) {
          const double gap = prog.constraints[static_cast<size_t>(i)].value(x) - slack_pc[i];
          if (gap > 0.0) g += 2.0 * gap * prog.constraints[static_cast<size_t>(i)].gradient(x);
        }
        return g;
      }};

  InnerSolveConfig inner;
  inner.stationarity_tol = 1e-10;
  auto res = minimize_smooth(violation, Vector::Zero(prog.dimension()), inner);
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < prog.constraint_count(); ++i)
    worst = std::max(worst, prog.constraints[static_cast<size_t>(i)].value(res.x) - slack_pc[i]);
  const bool feasible = worst <= cfg.phase_one_tol;
  if (!feasible && !res.converged)
    throw OracleInconsistencyError(
        "perturbation oracle: phase-one minimization stalled without a feasibility verdict");
  return {feasible, res.x};
}

inline PerturbationSample p_star_solver(const ConvexProgram& prog, const Vector& s,
                                        const OracleConfig& cfg) {
  PerturbationSample sample;
  sample.s = s;

  const Vector slack_pc = prog.constraint_slacks(s);
  auto [feasible, x_feas] = phase_one(prog, slack_pc, cfg);
  if (!feasible) return sample;  // +inf marker

  // Chase the saddle in rounds. Between rounds, accept early if the iterate is
  // feasible and weak duality already pins the value: for feasible x and any
  // lambda >= 0, g(lambda) <= p* <= f0(x), so a small gap certifies f0(x).
  // This matters when the active set empties out and the leftover stationarity
  // decays at the (tiny) curvature of the regularized objective.
  SolverConfig round_cfg = cfg.fixed_slack;
  round_cfg.max_iterations = std::min(cfg.fixed_slack.max_iterations, cfg.round_iterations);
  long spent = 0;
  std::optional<Vector> x_start = x_feas;
  std::optional<Vector> lambda_start;
  SolveReport report;
  double gap = std::numeric_limits<double>::infinity();
  while (true) {
    report = solve_fixed_slack(prog, s, round_cfg, x_start, lambda_start);
    spent += report.iterations;
    const double primal_value = prog.objective.value(report.state.x);
    try {
      gap = primal_value - dual_function_value(prog, report.state.lambda, s);
    } catch (const NonConvergenceError&) {
      gap = std::numeric_limits<double>::infinity();
    }
    if (report.converged) break;
    if (report.residual.feasibility <= cfg.fixed_slack.tol && std::abs(gap) <= cfg.gap_accept_tol)
      break;
    if (spent >= cfg.fixed_slack.max_iterations) {
      std::ostringstream msg;
      msg << "perturbation oracle: fixed-slack solve stalled after " << spent
          << " iterations (residual " << report.residual.max_component() << ", duality gap "
          << gap << ")";
      throw OracleInconsistencyError(msg.str());
    }
    x_start = report.state.x;
    lambda_start = report.state.lambda;
  }

  const double p_star = prog.objective.value(report.state.x);
  if (std::abs(gap) > cfg.duality_check_tol) {
    std::ostringstream msg;
    msg << "perturbation oracle: weak-duality cross-check failed (p*=" << p_star
        << ", duality gap=" << gap << ")";
    throw OracleInconsistencyError(msg.str());
  }

  sample.p_star = p_star;
  sample.x_star = report.state.x;
  return sample;
}

}  // namespace detail

/// Independent evaluation of p*(s). Dimensions <= 2 use exhaustive grid search
/// with window refinement; larger problems fall back to the fixed-slack solver
/// cross-checked through weak duality. Throws OracleInconsistencyError instead
/// of silently returning a value it cannot vouch for.
inline PerturbationSample p_star_oracle(const ConvexProgram& prog, const Vector& s,
                                        const OracleConfig& cfg = {}) {
  prog.validate();
  detail::require(s.size() == prog.slack_count, "p_star_oracle: s has wrong dimension");
  for (Eigen::Index k = 0; k < s.size(); ++k)
    detail::require(s[k] >= 0.0, "p_star_oracle: s must be componentwise nonnegative");

  const bool use_grid = cfg.method == OracleConfig::Method::kGrid ||
                        (cfg.method == OracleConfig::Method::kAuto && prog.dimension() <= 2);
  return use_grid ? detail::p_star_grid(prog, s, cfg) : detail::p_star_solver(prog, s, cfg);
}

/// Cartesian grid of reference slack vectors, per-axis bounds and step.
struct SlackGrid {
  Vector lo;
  Vector hi;
  Vector step;

  static SlackGrid uniform(int dim, double lo, double hi, double step) {
    return SlackGrid{Vector::Constant(dim, lo), Vector::Constant(dim, hi),
                     Vector::Constant(dim, step)};
  }

  std::vector<Vector> points() const {
    const int n = static_cast<int>(lo.size());
    detail::require(hi.size() == n && step.size() == n, "SlackGrid: inconsistent dimensions");
    std::vector<int> counts(static_cast<size_t>(n));
    long total = 1;
    for (int k = 0; k < n; ++k) {
      detail::require(step[k] > 0.0, "SlackGrid: step must be positive");
      detail::require(lo[k] >= 0.0 && hi[k] >= lo[k], "SlackGrid: invalid bounds");
      counts[static_cast<size_t>(k)] =
          static_cast<int>(std::floor((hi[k] - lo[k]) / step[k] + 1e-9)) + 1;
      total *= counts[static_cast<size_t>(k)];
      detail::require(total <= 2000000, "SlackGrid: grid too large");
    }
    std::vector<Vector> pts;
    pts.reserve(static_cast<size_t>(total));
    std::vector<int> idx(static_cast<size_t>(n), 0);
    for (long flat = 0; flat < total; ++flat) {
      Vector s(n);
      for (int k = 0; k < n; ++k) s[k] = lo[k] + idx[static_cast<size_t>(k)] * step[k];
      pts.push_back(std::move(s));
      for (int k = n - 1; k >= 0; --k) {
        if (++idx[static_cast<size_t>(k)] < counts[static_cast<size_t>(k)]) break;
        idx[static_cast<size_t>(k)] = 0;
      }
    }
    return pts;
  }
};

/// Certificate that s_dagger satisfies the compromise inequality against every
/// feasible reference on the grid: p*(s†) + h(s†) <= p*(s0) + h(s0).
struct CompromiseCertificate {
  Vector s_dagger;
  std::vector<Vector> grid;
  // max over feasible references of [p*(s†) + h(s†)] - [p*(s0) + h(s0)].
  double worst_violation = -std::numeric_limits<double>::infinity();
  Vector worst_reference;
  double tolerance = 0.0;
  bool pass = false;
  long feasible_count = 0;
  std::vector<double> reference_values;  // p*(s0) + h(s0); +inf where infeasible
};

inline CompromiseCertificate verify_compromise(const ConvexProgram& prog,
                                               const SpecCost& spec_cost, const Vector& s_dagger,
                                               const SlackGrid& grid, double tolerance = 1e-6,
                                               const OracleConfig& cfg = {}) {
  detail::require(spec_cost.dim == prog.slack_count,
                  "verify_compromise: spec cost dimension mismatch");
  detail::require(s_dagger.size() == prog.slack_count,
                  "verify_compromise: s_dagger has wrong dimension");
  for (Eigen::Index k = 0; k < s_dagger.size(); ++k) {
    detail::require(s_dagger[k] >= 0.0, "verify_compromise: s_dagger must be nonnegative");
    detail::require(grid.lo[k] <= s_dagger[k] && s_dagger[k] <= grid.hi[k],
                    "verify_compromise: grid box does not contain s_dagger");
  }

  CompromiseCertificate cert;
  cert.s_dagger = s_dagger;
  cert.grid = grid.points();
  cert.tolerance = tolerance;

  const PerturbationSample candidate = p_star_oracle(prog, s_dagger, cfg);
  const double q_dagger = candidate.p_star + spec_cost.value(s_dagger);

  cert.reference_values.reserve(cert.grid.size());
  for (const Vector& s0 : cert.grid) {
    const PerturbationSample ref = p_star_oracle(prog, s0, cfg);
    if (!ref.feasible()) {
      cert.reference_values.push_back(std::numeric_limits<double>::infinity());
      continue;  // the compromise inequality only quantifies over feasible references
    }
    const double q_ref = ref.p_star + spec_cost.value(s0);
    cert.reference_values.push_back(q_ref);
    ++cert.feasible_count;
    const double violation = q_dagger - q_ref;
    if (violation > cert.worst_violation) {
      cert.worst_violation = violation;
      cert.worst_reference = s0;
    }
  }
  if (cert.feasible_count == 0)
    throw InsufficientGridError("verify_compromise: no feasible reference on the grid");
  cert.pass = cert.worst_violation <= tolerance;
  return cert;
}

/// Finite-difference check of the sensitivity identity: the aggregated duals
/// G^T lambda of the fixed-slack solve at s should match -grad p*(s).
struct SensitivityReport {
  Vector lambda_oracle;  // -grad p*(s), central differences per slack column
  Vector lambda_solver;  // G^T lambda from the fixed-slack solve
  double max_error = 0.0;
};

inline SensitivityReport sensitivity_check(const ConvexProgram& prog, const Vector& s,
                                           double fd_step = 1e-3, const OracleConfig& cfg = {}) {
  detail::require(fd_step > 0.0, "sensitivity_check: fd_step must be positive");
  detail::require(s.size() == prog.slack_count, "sensitivity_check: s has wrong dimension");

  SensitivityReport rep;
  rep.lambda_oracle = Vector::Zero(prog.slack_count);
  for (int k = 0; k < prog.slack_count; ++k) {
    if (s[k] - fd_step < 0.0) {
      std::ostringstream msg;
      msg << "sensitivity_check: stencil leaves the nonnegative domain at slack " << k;
      throw StencilError(msg.str());
    }
    Vector s_plus = s, s_minus = s;
    s_plus[k] += fd_step;
    s_minus[k] -= fd_step;
    const PerturbationSample plus = p_star_oracle(prog, s_plus, cfg);
    const PerturbationSample minus = p_star_oracle(prog, s_minus, cfg);
    if (!plus.feasible() || !minus.feasible()) {
      std::ostringstream msg;
      msg << "sensitivity_check: infeasible point inside the stencil at slack " << k;
      throw StencilError(msg.str());
    }
    rep.lambda_oracle[k] = -(plus.p_star - minus.p_star) / (2.0 * fd_step);
  }

  SolveReport solve = solve_fixed_slack(prog, s, cfg.fixed_slack);
  if (!solve.converged)
    throw OracleInconsistencyError("sensitivity_check: fixed-slack solve did not converge");
  rep.lambda_solver = prog.aggregate_duals(solve.state.lambda);
  rep.max_error = (rep.lambda_oracle - rep.lambda_solver).cwiseAbs().maxCoeff();
  return rep;
}

/// Performance gained by granting slack budget delta to one slack column:
/// p*(0) - p*(delta e_k). Returns +inf when the nominal specification is
/// infeasible but the relaxed one is (relaxation restores feasibility).
inline double constraint_difficulty(const ConvexProgram& prog, int slack_index, double delta,
                                    const OracleConfig& cfg = {}) {
  detail::require(delta > 0.0, "constraint_difficulty: delta must be positive");
  detail::require(slack_index >= 0 && slack_index < prog.slack_count,
                  "constraint_difficulty: slack index out of range");

  const PerturbationSample nominal = p_star_oracle(prog, Vector::Zero(prog.slack_count), cfg);
  Vector relaxed_s = Vector::Zero(prog.slack_count);
  relaxed_s[slack_index] = delta;
  const PerturbationSample relaxed = p_star_oracle(prog, relaxed_s, cfg);

  if (!nominal.feasible() && !relaxed.feasible())
    throw UndefinedDifficultyError(
        "constraint_difficulty: infeasible at both the nominal and relaxed specification");
  if (!nominal.feasible()) return std::numeric_limits<double>::infinity();
  if (!relaxed.feasible())
    throw OracleInconsistencyError(
        "constraint_difficulty: relaxation reported infeasible although the nominal is feasible");
  return nominal.p_star - relaxed.p_star;
}

}  // namespace counterspec
