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

#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "counterspec/problem.hpp"

namespace counterspec::fixtures {

/// min (z-2)^2  s.to  z <= s. Compromise under h = ||s||^2: s = 1, dual 2, x = 1.
inline ConvexProgram qp1d() {
  ConvexProgram prog;
  prog.objective = QuadraticFunction((Matrix(1, 1) << 2.0).finished(),
                                     (Vector(1) << -4.0).finished(), 4.0)
                       .as_function();
  prog.constraints.push_back(QuadraticFunction(Matrix::Zero(1, 1),
                                               (Vector(1) << 1.0).finished(), 0.0)
                                 .as_function());
  prog.slack_of = {0};
  prog.slack_count = 1;
  return prog;
}

/// min z^2  s.to  z - 1 <= s. The constraint is inactive at the unconstrained
/// optimum, so loosening it buys nothing: the compromise slack is 0.
inline ConvexProgram inactive_qp() {
  ConvexProgram prog;
  prog.objective = QuadraticFunction((Matrix(1, 1) << 2.0).finished(), Vector::Zero(1), 0.0)
                       .as_function();
  prog.constraints.push_back(QuadraticFunction(Matrix::Zero(1, 1),
                                               (Vector(1) << 1.0).finished(), -1.0)
                                 .as_function());
  prog.slack_of = {0};
  prog.slack_count = 1;
  return prog;
}

/// min ||z - (2,1)||^2  s.to  z1 <= s1, z2 <= s2. Separable; compromise under
/// h = ||s||^2 is s = (1, 0.5).
inline ConvexProgram qp2d() {
  ConvexProgram prog;
  prog.objective = QuadraticFunction(2.0 * Matrix::Identity(2, 2),
                                     (Vector(2) << -4.0, -2.0).finished(), 5.0)
                       .as_function();
  prog.constraints.push_back(QuadraticFunction(Matrix::Zero(2, 2),
                                               (Vector(2) << 1.0, 0.0).finished(), 0.0)
                                 .as_function());
  prog.constraints.push_back(QuadraticFunction(Matrix::Zero(2, 2),
                                               (Vector(2) << 0.0, 1.0).finished(), 0.0)
                                 .as_function());
  prog.slack_of = {0, 1};
  prog.slack_count = 2;
  return prog;
}

/// Random 2-variable strongly convex QP with 2 linear constraints, built so
/// both constraints cut off the unconstrained minimizer by a definite margin.
/// That keeps the compromise slack strictly positive and the active set stable,
/// which the sensitivity stencils rely on.
inline ConvexProgram random_qp2d(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Strongly convex objective 0.5 (z - z*)' P (z - z*), eigenvalues in [0.6, 3].
  const double mu1 = 0.6 + 2.4 * unit(rng);
  const double mu2 = 0.6 + 2.4 * unit(rng);
  const double rot = 2.0 * M_PI * unit(rng);
  Matrix R(2, 2);
  R << std::cos(rot), -std::sin(rot), std::sin(rot), std::cos(rot);
  Matrix P = R * (Vector(2) << mu1, mu2).finished().asDiagonal() * R.transpose();
  P = 0.5 * (P + P.transpose());
  Vector z_star(2);
  z_star << -2.0 + 4.0 * unit(rng), -2.0 + 4.0 * unit(rng);
  Vector q = -P * z_star;
  const double r = 0.5 * z_star.dot(P * z_star);

  ConvexProgram prog;
  prog.objective = QuadraticFunction(P, q, r).as_function();

  // Constraints a_i'z + b_i <= s_i with unit normals separated by 60..120
  // degrees and f_i(z*) = margin_i in [0.3, 1].
  const double theta1 = 2.0 * M_PI * unit(rng);
  const double theta2 = theta1 + (M_PI / 3.0) * (1.0 + unit(rng));
  for (double theta : {theta1, theta2}) {
    Vector a(2);
    a << std::cos(theta), std::sin(theta);
    const double margin = 0.3 + 0.7 * unit(rng);
    const double b = margin - a.dot(z_star);
    prog.constraints.push_back(QuadraticFunction(Matrix::Zero(2, 2), a, b).as_function());
  }
  prog.slack_of = {0, 1};
  prog.slack_count = 2;
  return prog;
}

/// Built-in fixture lookup used by the CLI. The seed only matters for
/// "random2d".
inline std::optional<ConvexProgram> by_name(const std::string& name, uint64_t seed = 0) {
  if (name == "qp1d") return qp1d();
  if (name == "inactive") return inactive_qp();
  if (name == "qp2d") return qp2d();
  if (name == "random2d") {
    std::mt19937_64 rng(seed);
    return random_qp2d(rng);
  }
  return std::nullopt;
}

}  // namespace counterspec::fixtures
