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

#include "counterspec/problem.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "counterspec/fixtures.hpp"

namespace counterspec {
namespace {

Vector vec1(double v) { return (Vector(1) << v).finished(); }

// Central finite differences of f.value, for checking f.gradient.
Vector numerical_gradient(const DifferentiableFunction& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    g[k] = (f.value(xp) - f.value(xm)) / (2.0 * h);
  }
  return g;
}

void expect_gradient_consistent(const DifferentiableFunction& f, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(-3.0, 3.0);
  for (int rep = 0; rep < 20; ++rep) {
    Vector x(f.dim);
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = coord(rng);
    const Vector analytic = f.gradient(x);
    const Vector numeric = numerical_gradient(f, x);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double scale = std::max(1.0, std::abs(analytic[k]));
      EXPECT_NEAR(analytic[k], numeric[k], 1e-4 * scale);
    }
  }
}

TEST(QuadraticFunction, ValueAndGradient) {
  Matrix P(2, 2);
  P << 4.0, 1.0, 1.0, 2.0;
  Vector q(2);
  q << -1.0, 0.5;
  QuadraticFunction f(P, q, 3.0);

  Vector x(2);
  x << 1.0, -2.0;
  EXPECT_DOUBLE_EQ(f.value(x), 0.5 * x.dot(P * x) + q.dot(x) + 3.0);
  EXPECT_TRUE(f.gradient(x).isApprox(P * x + q, 1e-15));
}

TEST(QuadraticFunction, RejectsAsymmetricMatrix) {
  Matrix P(2, 2);
  P << 1.0, 1e-6, 0.0, 1.0;
  EXPECT_THROW(QuadraticFunction(P, Vector::Zero(2), 0.0), std::invalid_argument);
}

TEST(QuadraticFunction, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(20260810);
  Matrix P(2, 2);
  P << 3.0, -0.5, -0.5, 1.5;
  expect_gradient_consistent(QuadraticFunction(P, (Vector(2) << 1.0, -2.0).finished(), 0.7)
                                 .as_function(),
                             rng);
  expect_gradient_consistent(fixtures::qp1d().objective, rng);
  expect_gradient_consistent(fixtures::qp2d().constraints[0], rng);
  for (uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 gen(seed);
    const ConvexProgram prog = fixtures::random_qp2d(gen);
    expect_gradient_consistent(prog.objective, rng);
    expect_gradient_consistent(prog.constraints[0], rng);
    expect_gradient_consistent(prog.constraints[1], rng);
  }
}

TEST(ConvexProgram, ValidateCatchesBadGroupMaps) {
  ConvexProgram prog = fixtures::qp2d();
  prog.slack_of = {0, 0};  // column 1 unreferenced
  EXPECT_THROW(prog.validate(), std::invalid_argument);

  prog = fixtures::qp2d();
  prog.slack_of = {0, 2};
  EXPECT_THROW(prog.validate(), std::invalid_argument);

  prog = fixtures::qp2d();
  prog.constraints.push_back(fixtures::qp1d().constraints[0]);  // wrong dimension
  prog.slack_of = {0, 1, 1};
  EXPECT_THROW(prog.validate(), std::invalid_argument);
}

TEST(ConvexProgram, GroupMatrixShape) {
  ConvexProgram prog = fixtures::qp2d();
  prog.slack_of = {0, 0};
  prog.slack_count = 1;
  prog.validate();
  const Matrix g = prog.group_matrix();
  ASSERT_EQ(g.rows(), 2);
  ASSERT_EQ(g.cols(), 1);
  EXPECT_DOUBLE_EQ(g.sum(), 2.0);

  Vector lambda(2);
  lambda << 0.25, 1.0;
  EXPECT_DOUBLE_EQ(prog.aggregate_duals(lambda)[0], 1.25);
  EXPECT_TRUE(prog.constraint_slacks(vec1(0.5)).isApprox((Vector(2) << 0.5, 0.5).finished()));
}

TEST(SpecCost, SquaredNormProperties) {
  const SpecCost h = SpecCost::squared_norm(3);
  EXPECT_DOUBLE_EQ(h.value(Vector::Zero(3)), 0.0);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(0.0, 5.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vector s(3);
    for (int k = 0; k < 3; ++k) s[k] = coord(rng);
    const Vector grad = h.gradient(s);
    EXPECT_TRUE((grad.array() >= 0.0).all());
    EXPECT_LE((h.gradient_inverse(grad) - s).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Lagrangian, OneDimensionalExamples) {
  const ConvexProgram prog = fixtures::qp1d();
  EXPECT_NEAR(lagrangian_eval(prog, vec1(1.0), vec1(0.0), vec1(0.0)), 1.0, 1e-15);
  EXPECT_NEAR(lagrangian_eval(prog, vec1(1.0), vec1(2.0), vec1(1.0)), 1.0, 1e-15);
  EXPECT_NEAR(lagrangian_eval(prog, vec1(0.0), vec1(1.0), vec1(0.0)), 4.0, 1e-15);
}

TEST(Lagrangian, RejectsBadArguments) {
  const ConvexProgram prog = fixtures::qp1d();
  EXPECT_THROW(lagrangian_eval(prog, Vector::Zero(2), vec1(0.0), vec1(0.0)),
               std::invalid_argument);
  EXPECT_THROW(lagrangian_eval(prog, vec1(0.0), vec1(-1.0), vec1(0.0)), std::invalid_argument);
}

TEST(Lagrangian, LinearInSlack) {
  const ConvexProgram prog = fixtures::qp2d();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(0.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    Vector x(2), lambda(2), s(2), s2(2);
    for (int k = 0; k < 2; ++k) {
      x[k] = coord(rng) - 1.0;
      lambda[k] = coord(rng);
      s[k] = coord(rng);
      s2[k] = coord(rng);
    }
    const double lhs = lagrangian_eval(prog, x, lambda, s) - lagrangian_eval(prog, x, lambda, s2);
    const double rhs = -lambda.dot(prog.group_matrix() * (s - s2));
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

// With an identity group map the Lagrangian is the plain textbook sum.
TEST(Lagrangian, IdentityGroupMapMatchesTermByTerm) {
  const ConvexProgram prog = fixtures::qp2d();
  Vector x(2), lambda(2), s(2);
  x << 0.3, -0.7;
  lambda << 1.5, 0.25;
  s << 0.4, 0.9;
  double manual = prog.objective.value(x);
  for (int i = 0; i < 2; ++i)
    manual += lambda[i] * (prog.constraints[i].value(x) - s[i]);
  EXPECT_NEAR(lagrangian_eval(prog, x, lambda, s), manual, 1e-15);
}

TEST(KktResidual, AnalyticSaddleIsZero) {
  const ConvexProgram prog = fixtures::qp1d();
  const SpecCost h = SpecCost::squared_norm(1);
  const SaddleState state{vec1(1.0), vec1(2.0), vec1(1.0), 0};
  const KktResidual res = kkt_residual(prog, h, state);
  EXPECT_LE(res.stationarity, 1e-12);
  EXPECT_LE(res.feasibility, 1e-12);
  EXPECT_LE(res.complementarity, 1e-12);
  ASSERT_TRUE(res.counterfactual.has_value());
  EXPECT_LE(*res.counterfactual, 1e-12);
  EXPECT_LE(res.max_component(), 1e-12);
}

TEST(KktResidual, OriginState) {
  const ConvexProgram prog = fixtures::qp1d();
  const SpecCost h = SpecCost::squared_norm(1);
  const SaddleState state{vec1(0.0), vec1(0.0), vec1(0.0), 0};
  const KktResidual res = kkt_residual(prog, h, state);
  EXPECT_DOUBLE_EQ(res.stationarity, 4.0);
  EXPECT_DOUBLE_EQ(res.feasibility, 0.0);
  EXPECT_DOUBLE_EQ(res.complementarity, 0.0);
  EXPECT_DOUBLE_EQ(res.counterfactual.value(), 0.0);
}

TEST(KktResidual, NegativeDualRejected) {
  const ConvexProgram prog = fixtures::qp1d();
  const SpecCost h = SpecCost::squared_norm(1);
  const SaddleState state{vec1(1.0), vec1(-0.5), vec1(1.0), 0};
  EXPECT_THROW(kkt_residual(prog, h, state), std::invalid_argument);
}

TEST(KktResidual, FixedSlackVariantHasNoCounterfactualComponent) {
  const ConvexProgram prog = fixtures::qp1d();
  const SaddleState state{vec1(1.0), vec1(2.0), vec1(1.0), 0};
  const KktResidual res = kkt_residual(prog, state);
  EXPECT_FALSE(res.counterfactual.has_value());
  EXPECT_LE(res.max_component(), 1e-12);
}

TEST(DualFunction, OneDimensionalExamples) {
  const ConvexProgram prog = fixtures::qp1d();
  EXPECT_NEAR(dual_function_value(prog, vec1(0.0), vec1(0.0)), 0.0, 1e-8);
  EXPECT_NEAR(dual_function_value(prog, vec1(2.0), vec1(1.0)), 1.0, 1e-8);
  // At lambda = 4, s = 0 the dual value attains p*(0) = 4: strong duality.
  EXPECT_NEAR(dual_function_value(prog, vec1(4.0), vec1(0.0)), 4.0, 1e-8);
}

TEST(DualFunction, IterationCapCarriesBestValue) {
  // Badly conditioned inner problem so a handful of descent steps cannot
  // reach stationarity 1e-8.
  ConvexProgram prog;
  Matrix P = Matrix::Zero(2, 2);
  P(0, 0) = 2.0;
  P(1, 1) = 40.0;
  prog.objective = QuadraticFunction(P, (Vector(2) << 1.0, 1.0).finished(), 0.0).as_function();
  prog.constraints.push_back(
      QuadraticFunction(Matrix::Zero(2, 2), (Vector(2) << 1.0, 0.0).finished(), 0.0).as_function());
  prog.slack_of = {0};
  prog.slack_count = 1;

  InnerSolveConfig cfg;
  cfg.max_iterations = 3;
  try {
    dual_function_value(prog, vec1(1.0), vec1(0.0), cfg);
    FAIL() << "expected NonConvergenceError";
  } catch (const NonConvergenceError& err) {
    EXPECT_TRUE(std::isfinite(err.best_value));
    EXPECT_LE(err.iterations, 3);
  }
}

TEST(DualFunction, RejectsNegativeDuals) {
  const ConvexProgram prog = fixtures::qp1d();
  EXPECT_THROW(dual_function_value(prog, vec1(-1.0), vec1(0.0)), std::invalid_argument);
}

}  // namespace
}  // namespace counterspec
