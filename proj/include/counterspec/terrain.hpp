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

#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include "counterspec/control.hpp"
#include "counterspec/problem.hpp"

// Navigation over terrain whose friction grows toward the goal: a planar
// double integrator with velocity damping gamma(p), regulated by MPC. Two
// planners are supported: the counterfactual controller, which re-tunes its
// state/input specifications every tick, and a fixed-weight LQR baseline.

namespace counterspec {

/// Planar agent: x = (p_x, p_y, v_x, v_y).
struct AgentState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();

  Eigen::Vector4d packed() const {
    Eigen::Vector4d x;
    x << position, velocity;
    return x;
  }
  static AgentState unpack(const Eigen::Vector4d& x) {
    return AgentState{x.head<2>(), x.tail<2>()};
  }
};

/// Inverse-square velocity damping outside a slippery disc around the origin:
/// gamma(p) = ||p||^-2 for ||p|| > radius, 0 otherwise (boundary included in
/// the frictionless branch).
struct TerrainModel {
  double slip_radius = 0.3;

  double friction(const Eigen::Vector2d& p) const {
    const double norm = p.norm();
    if (norm <= slip_radius) return 0.0;
    return 1.0 / (norm * norm);
  }
};

/// friction(p) for the default terrain.
inline double friction(const Eigen::Vector2d& p) { return TerrainModel{}.friction(p); }

/// Exact zero-order-hold discretization of the decoupled per-axis dynamics
/// pdot = v, vdot = -gamma v + a, assembled into 4x4 / 4x2 matrices with both
/// axes identical. gamma = 0 reduces to the double-integrator hold.
inline LinearDynamics discretize(double gamma, double ts) {
  detail::require(gamma >= 0.0, "discretize: gamma must be nonnegative");
  detail::require(ts > 0.0, "discretize: ts must be positive");

  double decay, vel_gain, pos_gain;  // v' = decay v + vel_gain a; p gains below
  double pos_vel;                    // p' = p + pos_vel v + pos_gain a
  if (gamma * ts < 1e-6) {
    // Series limit; avoids 0/0 and cancellation for vanishing friction.
    decay = std::exp(-gamma * ts);
    pos_vel = ts * (1.0 - gamma * ts / 2.0);
    vel_gain = ts * (1.0 - gamma * ts / 2.0);
    pos_gain = ts * ts / 2.0 * (1.0 - gamma * ts / 3.0);
  } else {
    decay = std::exp(-gamma * ts);
    pos_vel = -std::expm1(-gamma * ts) / gamma;  // (1 - e^{-gamma ts}) / gamma
    vel_gain = pos_vel;
    pos_gain = (ts - pos_vel) / gamma;
  }

  LinearDynamics dyn;
  dyn.A = Matrix::Zero(4, 4);
  dyn.B = Matrix::Zero(4, 2);
  for (int axis = 0; axis < 2; ++axis) {
    dyn.A(axis, axis) = 1.0;
    dyn.A(axis, 2 + axis) = pos_vel;
    dyn.A(2 + axis, 2 + axis) = decay;
    dyn.B(axis, axis) = pos_gain;
    dyn.B(2 + axis, axis) = vel_gain;
  }
  return dyn;
}

enum class ControllerKind { kCounterfactual, kLqr };

struct SimConfig {
  double ts = 0.5;
  int horizon = 3;
  double stop_threshold = 0.1;  // on the full state norm ||x||
  int max_steps = 200;
  Eigen::Vector4d x0 = Eigen::Vector4d(1.5, 1.5, 0.0, 0.0);
  TerrainModel terrain;

  ControllerKind controller = ControllerKind::kCounterfactual;
  double lqr_state_weight = 1.0;  // Q_t = w I
  double lqr_input_weight = 1.0;  // R_t = w I

  double epsilon = 1e-6;   // counterfactual planner regularizer
  SolverConfig solver;     // counterfactual planner saddle configuration
  bool warm_start = true;  // reuse the previous tick's shifted plan

  void validate() const {
    detail::require(ts > 0.0, "SimConfig: ts must be positive");
    detail::require(horizon >= 1, "SimConfig: horizon must be >= 1");
    detail::require(stop_threshold > 0.0, "SimConfig: stop_threshold must be positive");
    detail::require(max_steps >= 1, "SimConfig: max_steps must be >= 1");
    detail::require(lqr_state_weight >= 0.0, "SimConfig: lqr_state_weight must be >= 0");
    detail::require(lqr_input_weight > 0.0, "SimConfig: lqr_input_weight must be > 0");
    solver.validate();
  }
};

/// Thrown when planning fails mid-simulation; the step index and the planner
/// diagnostics ride along.
class TickError : public std::runtime_error {
 public:
  TickError(int step_, const std::string& what, std::optional<SolveReport> report_ = std::nullopt)
      : std::runtime_error(what), step(step_), report(std::move(report_)) {}
  int step;
  std::optional<SolveReport> report;
};

/// MPC planner: measures friction at the current position, freezes it over the
/// horizon, plans, and hands back the first action. Counterfactual plans are
/// warm-started from the previous tick's solution shifted by one step.
class MpcController {
 public:
  explicit MpcController(SimConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  struct Tick {
    Eigen::Vector2d input;
    ControlSolution plan;
  };

  Tick tick(const AgentState& current) {
    const double gamma = cfg_.terrain.friction(current.position);
    const LinearDynamics dyn = discretize(gamma, cfg_.ts);

    if (cfg_.controller == ControllerKind::kLqr) {
      const LqrWeights weights = LqrWeights::uniform(4, 2, cfg_.horizon, cfg_.lqr_state_weight,
                                                     cfg_.lqr_input_weight);
      ControlSolution plan = solve_lqr(dyn, current.packed(), cfg_.horizon, weights);
      return {plan.inputs.front().head<2>(), std::move(plan)};
    }

    HorizonProblem hp{dyn, current.packed(), cfg_.horizon, cfg_.epsilon};
    ControlSolution plan =
        solve_cf_control(hp, SpecCost::squared_norm(4 + 2), cfg_.solver, warm_u_, warm_lambda_);
    if (cfg_.warm_start) remember_shifted(plan);
    return {plan.inputs.front().head<2>(), std::move(plan)};
  }

  void reset() {
    warm_u_ = std::nullopt;
    warm_lambda_ = std::nullopt;
  }

 private:
  // Shift the plan one step forward, repeating the terminal block.
  void remember_shifted(const ControlSolution& plan) {
    const int T = cfg_.horizon;
    const int l = 4, p = 2;
    Vector u(p * T), lam(l * T + p * T);
    for (int t = 0; t < T; ++t) {
      const size_t src = static_cast<size_t>(std::min(t + 1, T - 1));
      u.segment(t * p, p) = plan.inputs[src];
      lam.segment(t * l, l) = plan.state_duals[src];
      lam.segment(l * T + t * p, p) = plan.input_duals[src];
    }
    warm_u_ = std::move(u);
    warm_lambda_ = std::move(lam);
  }

  SimConfig cfg_;
  std::optional<Vector> warm_u_;
  std::optional<Vector> warm_lambda_;
};

/// One simulated step: the state the input was applied at, the measured
/// friction, and (for the counterfactual controller) the planned slacks.
struct StepRecord {
  int step = 0;
  Eigen::Vector4d state = Eigen::Vector4d::Zero();
  Eigen::Vector2d input = Eigen::Vector2d::Zero();
  double gamma = 0.0;
  Vector slack_x;  // empty for the LQR controller
  Vector slack_u;
  double tick_seconds = 0.0;
};

struct Trajectory {
  std::vector<StepRecord> steps;
  Eigen::Vector4d final_state = Eigen::Vector4d::Zero();
  int steps_to_threshold = 0;
  bool reached = false;
  double input_energy = 0.0;  // sum of ||u_t||^2 over applied inputs
  double mean_tick_seconds = 0.0;
};

/// Run the MPC loop: tick, apply the first action, advance the plant with the
/// friction measured at the pre-step position, and repeat until the state norm
/// drops below the threshold or the step cap is hit (the latter returns a
/// trajectory flagged as not reached).
inline Trajectory run_simulation(const SimConfig& cfg) {
  cfg.validate();
  Trajectory traj;
  Eigen::Vector4d x = cfg.x0;
  if (x.norm() <= cfg.stop_threshold) {
    traj.final_state = x;
    traj.reached = true;
    return traj;
  }

  MpcController controller(cfg);
  double tick_seconds_total = 0.0;
  for (int step = 0; step < cfg.max_steps; ++step) {
    const AgentState current = AgentState::unpack(x);

    const auto t0 = std::chrono::steady_clock::now();
    MpcController::Tick tick;
    try {
      tick = controller.tick(current);
    } catch (const ControlSolveError& err) {
      std::ostringstream msg;
      msg << "simulation step " << step << ": planner failed (" << err.what() << ")";
      throw TickError(step, msg.str(), err.report);
    } catch (const DivergenceError& err) {
      std::ostringstream msg;
      msg << "simulation step " << step << ": planner diverged (" << err.what() << ")";
      throw TickError(step, msg.str());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    tick_seconds_total += seconds;

    const double gamma = cfg.terrain.friction(current.position);
    StepRecord rec;
    rec.step = step;
    rec.state = x;
    rec.input = tick.input;
    rec.gamma = gamma;
    rec.slack_x = tick.plan.slack_x;
    rec.slack_u = tick.plan.slack_u;
    rec.tick_seconds = seconds;
    traj.steps.push_back(std::move(rec));
    traj.input_energy += tick.input.squaredNorm();

    const LinearDynamics plant = discretize(gamma, cfg.ts);
    x = plant.A * x + plant.B * tick.input;

    if (x.norm() <= cfg.stop_threshold) {
      traj.reached = true;
      break;
    }
  }

  traj.final_state = x;
  traj.steps_to_threshold = static_cast<int>(traj.steps.size());
  if (!traj.steps.empty()) tick_seconds_total /= static_cast<double>(traj.steps.size());
  traj.mean_tick_seconds = tick_seconds_total;
  return traj;
}

}  // namespace counterspec
