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
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include "counterspec/problem.hpp"

namespace counterspec {

struct SolverConfig {
  double eta = 1e-2;            // step size, 0 < eta << 1
  long max_iterations = 200000;
  double tol = 1e-6;            // on the max KKT residual component
  long trace_stride = 100;

  void validate() const {
    detail::require(eta > 0.0, "SolverConfig: eta must be positive");
    detail::require(tol > 0.0, "SolverConfig: tol must be positive");
    detail::require(max_iterations >= 1, "SolverConfig: max_iterations must be >= 1");
    detail::require(trace_stride >= 1, "SolverConfig: trace_stride must be >= 1");
  }
};

struct TraceEntry {
  long iteration = 0;
  Vector x;
  Vector lambda;
  Vector s;
  KktResidual residual;
};

struct SolveReport {
  SaddleState state;
  KktResidual residual;
  bool converged = false;
  long iterations = 0;
  std::vector<TraceEntry> trace;
};

/// Thrown when an iterate turns non-finite; the saddle dynamics oscillate for
/// too-large step sizes.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long iteration_, const std::string& what)
      : std::runtime_error(what), iteration(iteration_) {}
  long iteration;
};

/// One gradient-descent step on the Lagrangian in the primal variable:
/// x' = x - eta (grad f0(x) + sum_i lambda_i grad f_i(x)).
inline Vector primal_step(const ConvexProgram& prog, const SaddleState& state, double eta) {
  detail::check_state_dims(prog, state.x, state.lambda, state.s);
  detail::check_nonnegative(state.lambda, "primal_step: lambda");
  return state.x - eta * detail::lagrangian_gradient(prog, state.x, state.lambda);
}

namespace detail {

inline Vector slack_from_duals(const ConvexProgram& prog, const SpecCost& spec_cost,
                               const Vector& lambda) {
  Vector s = spec_cost.gradient_inverse(prog.aggregate_duals(lambda));
  for (Eigen::Index k = 0; k < s.size(); ++k)
    if (s[k] < 0.0)
      throw SpecCostContractError(
          "spec cost gradient inverse returned a negative slack component");
  return s;
}

/// Projected dual ascent from precomputed constraint values.
inline Vector dual_ascent(const ConvexProgram& prog, const Vector& fvals, const Vector& lambda,
                          const Vector& s, double eta) {
  Vector next(lambda.size());
  for (int i = 0; i < prog.constraint_count(); ++i) {
    const double g = fvals[i] - s[prog.slack_of[static_cast<size_t>(i)]];
    next[i] = std::max(0.0, lambda[i] + eta * g);
  }
  return next;
}

}  // namespace detail

/// Projected dual ascent with the counterfactual slack rule s = (grad h)^{-1}(G^T lambda):
/// lambda'_i = [lambda_i + eta (f_i(x) - s_{g(i)})]_+ and s' re-derived from lambda'.
inline std::pair<Vector, Vector> dual_step_counterfactual(const ConvexProgram& prog,
                                                          const SpecCost& spec_cost,
                                                          const SaddleState& state, double eta) {
  detail::check_state_dims(prog, state.x, state.lambda, state.s);
  detail::check_nonnegative(state.lambda, "dual_step_counterfactual: lambda");
  const Vector s_cur = detail::slack_from_duals(prog, spec_cost, state.lambda);
  const Vector fvals = detail::constraint_values(prog, state.x);
  Vector lambda_next = detail::dual_ascent(prog, fvals, state.lambda, s_cur, eta);
  Vector s_next = detail::slack_from_duals(prog, spec_cost, lambda_next);
  return {std::move(lambda_next), std::move(s_next)};
}

namespace detail {

// Shared saddle loop. spec_cost == nullptr freezes the slacks at fixed_s and
// drops the counterfactual residual component.
inline SolveReport saddle_loop(const ConvexProgram& prog, const SpecCost* spec_cost,
                               const Vector* fixed_s, const SolverConfig& cfg,
                               const std::optional<Vector>& x0,
                               const std::optional<Vector>& lambda0) {
  prog.validate();
  cfg.validate();
  const int n = prog.dimension();
  const int mc = prog.constraint_count();

  SaddleState state;
  state.x = x0.value_or(Vector::Zero(n));
  state.lambda = lambda0.value_or(Vector::Ones(mc));
  detail::require(state.x.size() == n, "solve: x0 has wrong dimension");
  detail::require(state.lambda.size() == mc, "solve: lambda0 has wrong dimension");
  check_nonnegative(state.lambda, "solve: lambda0");
  state.s = spec_cost ? slack_from_duals(prog, *spec_cost, state.lambda) : *fixed_s;
  state.iteration = 0;

  SolveReport report;
  for (long it = 0;; ++it) {
    state.iteration = it;
    const Vector fvals = constraint_values(prog, state.x);
    const Vector lag_grad = lagrangian_gradient(prog, state.x, state.lambda);
    const KktResidual res = residual_from_parts(prog, spec_cost, state, fvals, lag_grad);

    if (it % cfg.trace_stride == 0)
      report.trace.push_back({it, state.x, state.lambda, state.s, res});

    const bool done = res.max_component() <= cfg.tol;
    if (done || it == cfg.max_iterations) {
      if (report.trace.empty() || report.trace.back().iteration != it)
        report.trace.push_back({it, state.x, state.lambda, state.s, res});
      report.state = state;
      report.residual = res;
      report.converged = done;
      report.iterations = it;
      return report;
    }

    // Jacobi update: both steps read the pre-update (x, lambda).
    Vector x_next = state.x - cfg.eta * lag_grad;
    Vector lambda_next = dual_ascent(prog, fvals, state.lambda, state.s, cfg.eta);
    state.x = std::move(x_next);
    state.lambda = std::move(lambda_next);
    if (spec_cost) state.s = slack_from_duals(prog, *spec_cost, state.lambda);

    if (!all_finite(state.x) || !all_finite(state.lambda) || !all_finite(state.s)) {
      std::ostringstream msg;
      msg << "saddle iteration diverged at t=" << it + 1
          << " (non-finite iterate); try a smaller eta than " << cfg.eta;
      throw DivergenceError(it + 1, msg.str());
    }
  }
}

}  // namespace detail

/// Modified Arrow-Hurwicz iteration that solves the program directly for the
/// compromise slack: alternates primal descent with the counterfactual dual
/// step until the max KKT residual component is <= cfg.tol. Starts from
/// x = 0, lambda = 1 unless overridden (useful for warm starts).
inline SolveReport solve_counterfactual(const ConvexProgram& prog, const SpecCost& spec_cost,
                                        const SolverConfig& cfg = {},
                                        const std::optional<Vector>& x0 = std::nullopt,
                                        const std::optional<Vector>& lambda0 = std::nullopt) {
  detail::require(spec_cost.dim == prog.slack_count,
                  "solve_counterfactual: spec cost dimension mismatch");
  return detail::saddle_loop(prog, &spec_cost, nullptr, cfg, x0, lambda0);
}

/// Classic fixed-slack saddle iteration for  min f0  s.to  f_i(x) <= s_{g(i)}
/// with s held constant. The counterfactual residual is not applicable here.
inline SolveReport solve_fixed_slack(const ConvexProgram& prog, const Vector& s,
                                     const SolverConfig& cfg = {},
                                     const std::optional<Vector>& x0 = std::nullopt,
                                     const std::optional<Vector>& lambda0 = std::nullopt) {
  detail::require(s.size() == prog.slack_count, "solve_fixed_slack: s has wrong dimension");
  for (Eigen::Index k = 0; k < s.size(); ++k)
    detail::require(s[k] >= 0.0, "solve_fixed_slack: s must be componentwise nonnegative");
  return detail::saddle_loop(prog, nullptr, &s, cfg, x0, lambda0);
}

}  // namespace counterspec
