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

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace counterspec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

inline void require(bool condition, const std::string& what) {
  if (!condition) throw std::invalid_argument(what);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace detail

/// A smooth function R^n -> R described by value and gradient callables.
/// Callables must be pure (no hidden mutable state), so instances can be
/// evaluated concurrently from multiple threads.
struct DifferentiableFunction {
  int dim = 0;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

/// value(x) = 0.5 x'Px + q'x + r with P symmetric; gradient(x) = Px + q.
class QuadraticFunction {
 public:
  QuadraticFunction(Matrix P, Vector q, double r)
      : P_(std::move(P)), q_(std::move(q)), r_(r) {
    detail::require(P_.rows() == P_.cols(), "QuadraticFunction: P must be square");
    detail::require(P_.rows() == q_.size(), "QuadraticFunction: P and q dimensions differ");
    for (Eigen::Index i = 0; i < P_.rows(); ++i)
      for (Eigen::Index j = 0; j < i; ++j)
        detail::require(std::abs(P_(i, j) - P_(j, i)) <= 1e-12,
                        "QuadraticFunction: P is not symmetric");
  }

  int dim() const { return static_cast<int>(q_.size()); }
  const Matrix& P() const { return P_; }
  const Vector& q() const { return q_; }
  double r() const { return r_; }

  // Hand-rolled accumulation: this runs inside grid-oracle scans, where
  // Eigen expression temporaries would dominate the cost.
  double value(const Vector& x) const {
    const int n = dim();
    double acc = r_;
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += P_(i, j) * x[j];
      acc += (0.5 * row + q_[i]) * x[i];
    }
    return acc;
  }

  Vector gradient(const Vector& x) const {
    Vector g = q_;
    g.noalias() += P_ * x;
    return g;
  }

  DifferentiableFunction as_function() const {
    QuadraticFunction copy = *this;
    return DifferentiableFunction{
        copy.dim(),
        [copy](const Vector& x) { return copy.value(x); },
        [copy](const Vector& x) { return copy.gradient(x); }};
  }

 private:
  Matrix P_;
  Vector q_;
  double r_;
};

/// Convex program  min f0(x)  s.to  f_i(x) <= s_{g(i)},  i = 1..m_c,
/// where g assigns each constraint to one of m_s shared slack columns.
/// With slack_of[i] == i for all i this is the plain one-slack-per-constraint
/// program; shared columns let one slack serve a group of constraints (for
/// instance all time steps of a horizon).
struct ConvexProgram {
  DifferentiableFunction objective;
  std::vector<DifferentiableFunction> constraints;
  std::vector<int> slack_of;  // g: constraint index -> slack column
  int slack_count = 0;

  int dimension() const { return objective.dim; }
  int constraint_count() const { return static_cast<int>(constraints.size()); }

  void validate() const {
    detail::require(objective.dim > 0, "ConvexProgram: objective dimension must be positive");
    detail::require(objective.value && objective.gradient,
                    "ConvexProgram: objective callables not set");
    detail::require(slack_of.size() == constraints.size(),
                    "ConvexProgram: slack_of must have one entry per constraint");
    detail::require(slack_count >= 1, "ConvexProgram: slack_count must be positive");
    std::vector<bool> used(static_cast<size_t>(slack_count), false);
    for (size_t i = 0; i < constraints.size(); ++i) {
      detail::require(constraints[i].dim == objective.dim,
                      "ConvexProgram: constraint dimension differs from objective");
      detail::require(constraints[i].value && constraints[i].gradient,
                      "ConvexProgram: constraint callables not set");
      detail::require(slack_of[i] >= 0 && slack_of[i] < slack_count,
                      "ConvexProgram: slack_of entry out of range");
      used[static_cast<size_t>(slack_of[i])] = true;
    }
    for (int k = 0; k < slack_count; ++k)
      detail::require(used[static_cast<size_t>(k)],
                      "ConvexProgram: slack column " + std::to_string(k) +
                          " is referenced by no constraint");
  }

  /// Dense m_c x m_s group matrix G; every row has exactly one 1.
  Matrix group_matrix() const {
    Matrix g = Matrix::Zero(constraint_count(), slack_count);
    for (int i = 0; i < constraint_count(); ++i) g(i, slack_of[static_cast<size_t>(i)]) = 1.0;
    return g;
  }

  /// G^T lambda: per-slack-column sum of the duals attached to it.
  Vector aggregate_duals(const Vector& lambda) const {
    detail::require(lambda.size() == constraint_count(),
                    "aggregate_duals: lambda has wrong dimension");
    Vector out = Vector::Zero(slack_count);
    for (int i = 0; i < constraint_count(); ++i) out[slack_of[static_cast<size_t>(i)]] += lambda[i];
    return out;
  }

  /// G s: the slack value seen by each constraint.
  Vector constraint_slacks(const Vector& s) const {
    detail::require(s.size() == slack_count, "constraint_slacks: s has wrong dimension");
    Vector out(constraint_count());
    for (int i = 0; i < constraint_count(); ++i) out[i] = s[slack_of[static_cast<size_t>(i)]];
    return out;
  }
};

/// Cost of loosening specifications: h : R+^m -> R+ non-decreasing with
/// h(0) = 0 and a strongly convex shape so that grad h is invertible.
struct SpecCost {
  int dim = 0;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::function<Vector(const Vector&)> gradient_inverse;

  /// h(s) = ||s||^2, grad h(s) = 2s, (grad h)^{-1}(y) = y/2.
  static SpecCost squared_norm(int dim) {
    return SpecCost{dim,
                    [](const Vector& s) { return s.squaredNorm(); },
                    [](const Vector& s) -> Vector { return 2.0 * s; },
                    [](const Vector& y) -> Vector { return 0.5 * y; }};
  }
};

/// Joint iterate of the saddle-point dynamics.
struct SaddleState {
  Vector x;
  Vector lambda;  // componentwise >= 0 at all times
  Vector s;       // derived as (grad h)^{-1}(G^T lambda) by the counterfactual solver
  long iteration = 0;
};

/// Convergence certificate: all components are ~0 at a saddle point of the
/// Lagrangian whose slacks satisfy the compromise condition.
struct KktResidual {
  double stationarity = 0.0;    // || grad f0 + sum_i lambda_i grad f_i ||
  double feasibility = 0.0;     // max_i [f_i(x) - s_{g(i)}]_+
  double complementarity = 0.0; // max_i | lambda_i (f_i(x) - s_{g(i)}) |
  // || grad h(s) - G^T lambda ||; absent when slacks are externally fixed.
  std::optional<double> counterfactual;

  double max_component() const {
    double m = std::max({stationarity, feasibility, complementarity});
    if (counterfactual) m = std::max(m, *counterfactual);
    return m;
  }
};

namespace detail {

inline void check_state_dims(const ConvexProgram& prog, const Vector& x, const Vector& lambda,
                             const Vector& s) {
  require(x.size() == prog.dimension(), "state: x has wrong dimension");
  require(lambda.size() == prog.constraint_count(), "state: lambda has wrong dimension");
  require(s.size() == prog.slack_count, "state: s has wrong dimension");
}

inline void check_nonnegative(const Vector& lambda, const std::string& name) {
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    require(lambda[i] >= 0.0, name + " must be componentwise nonnegative");
}

/// grad f0(x) + sum_i lambda_i grad f_i(x). Zero-weight constraints are skipped.
inline Vector lagrangian_gradient(const ConvexProgram& prog, const Vector& x,
                                  const Vector& lambda) {
  Vector g = prog.objective.gradient(x);
  for (int i = 0; i < prog.constraint_count(); ++i)
    if (lambda[i] != 0.0) g += lambda[i] * prog.constraints[static_cast<size_t>(i)].gradient(x);
  return g;
}

inline Vector constraint_values(const ConvexProgram& prog, const Vector& x) {
  Vector f(prog.constraint_count());
  for (int i = 0; i < prog.constraint_count(); ++i)
    f[i] = prog.constraints[static_cast<size_t>(i)].value(x);
  return f;
}

inline KktResidual residual_from_parts(const ConvexProgram& prog, const SpecCost* spec_cost,
                                       const SaddleState& state, const Vector& fvals,
                                       const Vector& lag_grad) {
  KktResidual res;
  res.stationarity = lag_grad.norm();
  const Vector slack_pc = prog.constraint_slacks(state.s);
  for (int i = 0; i < prog.constraint_count(); ++i) {
    const double gap = fvals[i] - slack_pc[i];
    res.feasibility = std::max(res.feasibility, std::max(gap, 0.0));
    res.complementarity = std::max(res.complementarity, std::abs(state.lambda[i] * gap));
  }
  if (spec_cost != nullptr)
    res.counterfactual = (spec_cost->gradient(state.s) - prog.aggregate_duals(state.lambda)).norm();
  return res;
}

}  // namespace detail

/// L(x, lambda, s) = f0(x) + sum_i lambda_i (f_i(x) - s_{g(i)}).
inline double lagrangian_eval(const ConvexProgram& prog, const Vector& x, const Vector& lambda,
                              const Vector& s) {
  detail::check_state_dims(prog, x, lambda, s);
  detail::check_nonnegative(lambda, "lagrangian_eval: lambda");
  double acc = prog.objective.value(x);
  for (int i = 0; i < prog.constraint_count(); ++i)
    acc += lambda[i] *
           (prog.constraints[static_cast<size_t>(i)].value(x) - s[prog.slack_of[static_cast<size_t>(i)]]);
  return acc;
}

/// All four residual components, including the counterfactual one.
inline KktResidual kkt_residual(const ConvexProgram& prog, const SpecCost& spec_cost,
                                const SaddleState& state) {
  detail::check_state_dims(prog, state.x, state.lambda, state.s);
  detail::check_nonnegative(state.lambda, "kkt_residual: lambda");
  detail::require(spec_cost.dim == prog.slack_count, "kkt_residual: spec cost dimension mismatch");
  return detail::residual_from_parts(prog, &spec_cost, state,
                                     detail::constraint_values(prog, state.x),
                                     detail::lagrangian_gradient(prog, state.x, state.lambda));
}

/// Fixed-slack variant: the counterfactual component is not applicable.
inline KktResidual kkt_residual(const ConvexProgram& prog, const SaddleState& state) {
  detail::check_state_dims(prog, state.x, state.lambda, state.s);
  detail::check_nonnegative(state.lambda, "kkt_residual: lambda");
  return detail::residual_from_parts(prog, nullptr, state,
                                     detail::constraint_values(prog, state.x),
                                     detail::lagrangian_gradient(prog, state.x, state.lambda));
}

/// Thrown when an iterative routine hits its cap; carries the best value seen.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double best_value_, long iterations_)
      : std::runtime_error(what), best_value(best_value_), iterations(iterations_) {}
  double best_value;
  long iterations;
};

/// Thrown when a SpecCost gradient inverse produces a negative slack.
class SpecCostContractError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InnerSolveConfig {
  double stationarity_tol = 1e-8;
  long max_iterations = 200000;
  double initial_step = 1.0;
};

namespace detail {

struct MinimizeResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  long iterations = 0;
  bool converged = false;
};

/// Gradient descent with Armijo backtracking and a growing trial step, for
/// smooth convex functions; stops on ||grad|| <= tol. Once the achievable
/// decrease drops below what double precision can measure in f, the line
/// search is abandoned for fixed-step descent at the last stable step size,
/// which keeps contracting the gradient past the value-noise floor.
inline MinimizeResult minimize_smooth(const DifferentiableFunction& f, Vector x,
                                      const InnerSolveConfig& cfg) {
  constexpr double kArmijo = 1e-4;
  MinimizeResult out;
  double fx = f.value(x);
  Vector grad = f.gradient(x);
  double step = cfg.initial_step;
  double accepted_step = 0.0;
  bool floor_mode = false;
  double best_gnorm = std::numeric_limits<double>::infinity();

  long it = 0;
  for (; it < cfg.max_iterations; ++it) {
    const double gnorm = grad.norm();
    if (gnorm <= cfg.stationarity_tol) {
      out.converged = true;
      break;
    }
    best_gnorm = std::min(best_gnorm, gnorm);

    if (!floor_mode) {
      const double g2 = gnorm * gnorm;
      const double measurable = 1e-14 * (1.0 + std::abs(fx));
      bool accepted = false;
      while (kArmijo * step * g2 >= measurable) {
        Vector trial = x - step * grad;
        const double ftrial = f.value(trial);
        if (std::isfinite(ftrial) && ftrial <= fx - kArmijo * step * g2) {
          x = std::move(trial);
          fx = ftrial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (accepted) {
        accepted_step = step;
        grad = f.gradient(x);
        step *= 2.0;
        continue;
      }
      floor_mode = true;
      step = 0.5 * (accepted_step > 0.0 ? accepted_step : step);
    }

    x -= step * grad;
    grad = f.gradient(x);
    if (grad.norm() > 10.0 * best_gnorm) step *= 0.5;  // instability guard
  }

  out.x = std::move(x);
  out.value = f.value(out.x);
  out.grad_norm = grad.norm();
  out.iterations = it;
  if (!out.converged) out.converged = out.grad_norm <= cfg.stationarity_tol;
  return out;
}

}  // namespace detail

/// g(lambda, s) = min_x L(x, lambda, s), computed by gradient descent on the
/// strongly convex inner problem. A weak-duality lower bound on p*(s).
inline double dual_function_value(const ConvexProgram& prog, const Vector& lambda, const Vector& s,
                                  const InnerSolveConfig& cfg = {}) {
  detail::require(lambda.size() == prog.constraint_count(),
                  "dual_function_value: lambda has wrong dimension");
  detail::require(s.size() == prog.slack_count, "dual_function_value: s has wrong dimension");
  detail::check_nonnegative(lambda, "dual_function_value: lambda");

  // The slack term is constant in x; minimize f0 + sum lambda_i f_i and add it back.
  DifferentiableFunction inner{
      prog.dimension(),
      [&prog, &lambda](const Vector& x) {
        double acc = prog.objective.value(x);
        for (int i = 0; i < prog.constraint_count(); ++i)
          if (lambda[i] != 0.0) acc += lambda[i] * prog.constraints[static_cast<size_t>(i)].value(x);
        return acc;
      },
      [&prog, &lambda](const Vector& x) { return detail::lagrangian_gradient(prog, x, lambda); }};

  const double slack_term = prog.aggregate_duals(lambda).dot(s);
  auto result = detail::minimize_smooth(inner, Vector::Zero(prog.dimension()), cfg);
  if (!result.converged)
    throw NonConvergenceError("dual_function_value: inner minimization hit the iteration cap",
                              result.value - slack_term, result.iterations);
  return result.value - slack_term;
}

}  // namespace counterspec
