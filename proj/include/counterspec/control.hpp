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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "counterspec/problem.hpp"
#include "counterspec/solver.hpp"

namespace counterspec {

/// Discrete-time linear dynamics x_t = A x_{t-1} + B u_t.
struct LinearDynamics {
  Matrix A;
  Matrix B;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int input_dim() const { return static_cast<int>(B.cols()); }

  void validate() const {
    detail::require(A.rows() == A.cols(), "LinearDynamics: A must be square");
    detail::require(B.rows() == A.rows(), "LinearDynamics: A and B row counts differ");
    detail::require(A.allFinite() && B.allFinite(), "LinearDynamics: non-finite entries");
  }
};

/// Finite-horizon planning instance: regulate from x0 over T steps, with
/// squared per-coordinate state and input bounds tied to shared slacks.
/// epsilon weights the ||u||^2 regularizer that keeps the condensed objective
/// strongly convex.
struct HorizonProblem {
  LinearDynamics dynamics;
  Vector x0;
  int horizon = 1;
  double epsilon = 1e-6;

  void validate() const {
    dynamics.validate();
    detail::require(x0.size() == dynamics.state_dim(), "HorizonProblem: x0 dimension mismatch");
    detail::require(horizon >= 1, "HorizonProblem: horizon must be >= 1");
    detail::require(epsilon > 0.0, "HorizonProblem: epsilon must be positive");
  }
};

/// Per-step diagonal quadratic weights: Q_t PSD, R_t PD.
struct LqrWeights {
  std::vector<Vector> q_diag;  // one l-vector per step
  std::vector<Vector> r_diag;  // one p-vector per step

  void validate(int state_dim, int input_dim, int horizon) const {
    detail::require(static_cast<int>(q_diag.size()) == horizon &&
                        static_cast<int>(r_diag.size()) == horizon,
                    "LqrWeights: need one weight pair per step");
    for (int t = 0; t < horizon; ++t) {
      detail::require(q_diag[static_cast<size_t>(t)].size() == state_dim &&
                          r_diag[static_cast<size_t>(t)].size() == input_dim,
                      "LqrWeights: wrong weight dimensions");
      detail::require((q_diag[static_cast<size_t>(t)].array() >= 0.0).all(),
                      "LqrWeights: Q_t diagonal must be nonnegative");
      detail::require((r_diag[static_cast<size_t>(t)].array() > 0.0).all(),
                      "LqrWeights: R_t diagonal must be positive");
    }
  }

  static LqrWeights uniform(int state_dim, int input_dim, int horizon, double q_scale,
                            double r_scale) {
    LqrWeights w;
    w.q_diag.assign(static_cast<size_t>(horizon), Vector::Constant(state_dim, q_scale));
    w.r_diag.assign(static_cast<size_t>(horizon), Vector::Constant(input_dim, r_scale));
    return w;
  }
};

/// A solved plan. Counterfactual solves carry duals, slacks and the saddle
/// report; LQR solves leave those empty.
struct ControlSolution {
  std::vector<Vector> inputs;       // u_1..u_T
  std::vector<Vector> states;       // x_1..x_T, forward recursion from x0
  std::vector<Vector> state_duals;  // per step t: one weight per state coordinate
  std::vector<Vector> input_duals;  // per step t: one weight per input coordinate
  Vector slack_x;
  Vector slack_u;
  double objective = 0.0;
  std::optional<SolveReport> report;
};

/// Thrown when a counterfactual control solve fails; carries the partial report.
class ControlSolveError : public std::runtime_error {
 public:
  ControlSolveError(const std::string& what, SolveReport report_)
      : std::runtime_error(what), report(std::move(report_)) {}
  SolveReport report;
};

/// Stacked prediction matrices: vec(x_1..x_T) = Phi x0 + Gamma vec(u_1..u_T).
struct StateMap {
  Matrix Phi;    // (l*T) x l
  Matrix Gamma;  // (l*T) x (p*T), block lower triangular
};

inline StateMap condensed_state_map(const LinearDynamics& dyn, int horizon) {
  dyn.validate();
  detail::require(horizon >= 1, "condensed_state_map: horizon must be >= 1");
  const int l = dyn.state_dim();
  const int p = dyn.input_dim();

  std::vector<Matrix> a_pow(static_cast<size_t>(horizon) + 1);
  a_pow[0] = Matrix::Identity(l, l);
  for (int t = 1; t <= horizon; ++t) a_pow[static_cast<size_t>(t)] = dyn.A * a_pow[static_cast<size_t>(t - 1)];

  StateMap map;
  map.Phi = Matrix::Zero(l * horizon, l);
  map.Gamma = Matrix::Zero(l * horizon, p * horizon);
  for (int t = 1; t <= horizon; ++t) {
    map.Phi.block((t - 1) * l, 0, l, l) = a_pow[static_cast<size_t>(t)];
    for (int k = 1; k <= t; ++k)
      map.Gamma.block((t - 1) * l, (k - 1) * p, l, p) = a_pow[static_cast<size_t>(t - k)] * dyn.B;
  }
  return map;
}

/// x_t = A x_{t-1} + B u_t for t = 1..inputs.size().
inline std::vector<Vector> rollout(const LinearDynamics& dyn, const Vector& x0,
                                   const std::vector<Vector>& inputs) {
  std::vector<Vector> states;
  states.reserve(inputs.size());
  Vector x = x0;
  for (const Vector& u : inputs) {
    x = dyn.A * x + dyn.B * u;
    states.push_back(x);
  }
  return states;
}

/// Condense the horizon problem into a program over u = (u_1,...,u_T):
/// states are eliminated through the prediction map, each squared state
/// coordinate ([x_t]_i)^2 <= s_{x,i} and input coordinate ([u_t]_j)^2 <= s_{u,j}
/// becomes a quadratic constraint, and the objective is epsilon ||u||^2.
///
/// Constraint order: state (t, i) blocks for t = 1..T, then input (t, j)
/// blocks; slack columns are the l state coordinates followed by the p input
/// coordinates, shared across all steps.
inline ConvexProgram condense(const HorizonProblem& hp) {
  hp.validate();
  const int l = hp.dynamics.state_dim();
  const int p = hp.dynamics.input_dim();
  const int T = hp.horizon;
  const int n = p * T;
  const StateMap map = condensed_state_map(hp.dynamics, T);

  ConvexProgram prog;
  prog.objective =
      QuadraticFunction(2.0 * hp.epsilon * Matrix::Identity(n, n), Vector::Zero(n), 0.0)
          .as_function();
  prog.slack_count = l + p;

  // ([x_t]_i)^2 = (c + d'u)^2 with c = [Phi x0]_{t,i}, d = Gamma row.
  const Vector drift = map.Phi * hp.x0;
  for (int t = 1; t <= T; ++t) {
    for (int i = 0; i < l; ++i) {
      const int row = (t - 1) * l + i;
      const Vector d = map.Gamma.row(row).transpose();
      const double c = drift[row];
      prog.constraints.push_back(
          QuadraticFunction(2.0 * d * d.transpose(), 2.0 * c * d, c * c).as_function());
      prog.slack_of.push_back(i);
    }
  }
  for (int t = 1; t <= T; ++t) {
    for (int j = 0; j < p; ++j) {
      const int col = (t - 1) * p + j;
      Matrix P = Matrix::Zero(n, n);
      P(col, col) = 2.0;
      prog.constraints.push_back(QuadraticFunction(P, Vector::Zero(n), 0.0).as_function());
      prog.slack_of.push_back(l + j);
    }
  }
  return prog;
}

/// Counterfactually tune (s_x, s_u) while solving the horizon problem.
/// Optional warm starts take the stacked input vector and the stacked dual
/// vector from a previous solve.
inline ControlSolution solve_cf_control(const HorizonProblem& hp, const SpecCost& spec_cost,
                                        const SolverConfig& cfg = {},
                                        const std::optional<Vector>& warm_u = std::nullopt,
                                        const std::optional<Vector>& warm_lambda = std::nullopt) {
  hp.validate();
  const int l = hp.dynamics.state_dim();
  const int p = hp.dynamics.input_dim();
  const int T = hp.horizon;
  detail::require(spec_cost.dim == l + p, "solve_cf_control: spec cost dimension must be l + p");

  const ConvexProgram prog = condense(hp);
  SolveReport report = solve_counterfactual(prog, spec_cost, cfg, warm_u, warm_lambda);
  if (!report.converged)
    throw ControlSolveError("solve_cf_control: saddle iteration hit the cap before tol",
                            std::move(report));

  ControlSolution sol;
  const Vector& u = report.state.x;
  sol.inputs.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) sol.inputs.push_back(u.segment(t * p, p));
  sol.states = rollout(hp.dynamics, hp.x0, sol.inputs);
  sol.state_duals.reserve(static_cast<size_t>(T));
  sol.input_duals.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t)
    sol.state_duals.push_back(report.state.lambda.segment(t * l, l));
  for (int t = 0; t < T; ++t)
    sol.input_duals.push_back(report.state.lambda.segment(l * T + t * p, p));
  sol.slack_x = report.state.s.head(l);
  sol.slack_u = report.state.s.tail(p);
  sol.objective = prog.objective.value(u);
  sol.report = std::move(report);
  return sol;
}

/// Exact finite-horizon LQR: minimize sum_t x_t'Q_t x_t + u_t'R_t u_t subject
/// to the dynamics, solved in condensed form as one dense SPD system.
inline ControlSolution solve_lqr(const LinearDynamics& dyn, const Vector& x0, int horizon,
                                 const LqrWeights& weights) {
  dyn.validate();
  detail::require(x0.size() == dyn.state_dim(), "solve_lqr: x0 dimension mismatch");
  detail::require(horizon >= 1, "solve_lqr: horizon must be >= 1");
  const int l = dyn.state_dim();
  const int p = dyn.input_dim();
  weights.validate(l, p, horizon);

  const StateMap map = condensed_state_map(dyn, horizon);
  Vector q_stack(l * horizon), r_stack(p * horizon);
  for (int t = 0; t < horizon; ++t) {
    q_stack.segment(t * l, l) = weights.q_diag[static_cast<size_t>(t)];
    r_stack.segment(t * p, p) = weights.r_diag[static_cast<size_t>(t)];
  }

  const Matrix weighted_gamma = q_stack.asDiagonal() * map.Gamma;
  Matrix H = map.Gamma.transpose() * weighted_gamma;
  H += Matrix(r_stack.asDiagonal());
  const Vector rhs = -weighted_gamma.transpose() * (map.Phi * x0);

  Eigen::LDLT<Matrix> ldlt(H);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("solve_lqr: normal matrix factorization failed");
  const Vector u = ldlt.solve(rhs);

  ControlSolution sol;
  sol.inputs.reserve(static_cast<size_t>(horizon));
  for (int t = 0; t < horizon; ++t) sol.inputs.push_back(u.segment(t * p, p));
  sol.states = rollout(dyn, x0, sol.inputs);
  double cost = 0.0;
  for (int t = 0; t < horizon; ++t) {
    cost += sol.states[static_cast<size_t>(t)].dot(
        weights.q_diag[static_cast<size_t>(t)].cwiseProduct(sol.states[static_cast<size_t>(t)]));
    cost += sol.inputs[static_cast<size_t>(t)].dot(
        weights.r_diag[static_cast<size_t>(t)].cwiseProduct(sol.inputs[static_cast<size_t>(t)]));
  }
  sol.objective = cost;
  return sol;
}

/// Read per-step LQR weights off a counterfactual solution: Q_t from the state
/// duals and R_t from the input duals, flooring R entries at 1e-9 to keep the
/// weighted problem strictly convex in u. Replaying these weights through
/// solve_lqr reproduces the counterfactual input sequence.
inline LqrWeights reconstruct_lqr_weights(const ControlSolution& sol) {
  detail::require(!sol.state_duals.empty() && !sol.input_duals.empty(),
                  "reconstruct_lqr_weights: solution carries no duals");
  constexpr double kFloor = 1e-9;
  LqrWeights w;
  w.q_diag.reserve(sol.state_duals.size());
  w.r_diag.reserve(sol.input_duals.size());
  for (const Vector& lam : sol.state_duals) w.q_diag.push_back(lam);
  for (const Vector& mu : sol.input_duals) w.r_diag.push_back(mu.cwiseMax(kFloor));
  return w;
}

}  // namespace counterspec
