/*
 * Copyright 2026 The medbalance Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "medbalance/balance.hpp"
#include "medbalance/oracle.hpp"

namespace mb = medbalance;

namespace {

struct Instance {
  mb::Matrix X;
  mb::Matrix MX;
  mb::Vector A;
};

Instance make_instance(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  Instance in;
  in.X.resize(n, 2);
  in.MX.resize(n, 3);
  in.A.resize(n);
  for (int i = 0; i < n; ++i) {
    in.X.row(i) << z(rng), z(rng);
    const double p = 1.0 / (1.0 + std::exp(-(0.3 + 0.6 * in.X(i, 0) - 0.4 * in.X(i, 1))));
    in.A(i) = u(rng) < p ? 1.0 : 0.0;
    const double m = 0.5 * in.X(i, 0) + 0.8 * in.A(i) + z(rng);
    in.MX.row(i) << m, in.X(i, 0), in.X(i, 1);
  }
  return in;
}

mb::BalancingConfig fixed_config(double bandwidth, double lambda, mb::NormalSolver solver) {
  mb::BalancingConfig cfg;
  cfg.pi_kernel = mb::KernelSpec::gaussian(bandwidth);
  cfg.lambda_pi = lambda;
  cfg.lambda_h = lambda;
  cfg.tune = false;
  cfg.solver = solver;
  return cfg;
}

double relative_gap(const mb::Vector& a, const mb::Vector& b) { return (a - b).norm() / (1.0 + b.norm()); }

}  // namespace

TEST(BalancePi1, ClosedFormMatchesOracle) {
  const Instance in = make_instance(40, 1);
  const auto cfg = fixed_config(1.0, 1e-2, mb::NormalSolver::pseudo_inverse);
  const mb::BalanceFit fit = mb::fit_pi1(in.X, in.A, cfg);
  const mb::OracleResult orc = mb::numeric_minimax_oracle(mb::MinimaxFamily::pi1, in.X, in.A, mb::Vector(), cfg);
  EXPECT_LT(relative_gap(fit.coefficients, orc.coefficients), 1e-6);
}

TEST(BalancePi2, ClosedFormMatchesOracle) {
  const Instance in = make_instance(40, 2);
  const auto cfg = fixed_config(1.5, 1e-2, mb::NormalSolver::pseudo_inverse);
  const mb::Vector pi1 = mb::fit_pi1(in.X, in.A, cfg).evaluate(in.X);
  const mb::BalanceFit fit = mb::fit_pi2(in.MX, in.A, pi1, cfg);
  const mb::OracleResult orc = mb::numeric_minimax_oracle(mb::MinimaxFamily::pi2, in.MX, in.A, pi1, cfg);
  EXPECT_LT(relative_gap(fit.coefficients, orc.coefficients), 1e-6);
}

TEST(BalancePi1, FactoredSolverGivesSameFunction) {
  const Instance in = make_instance(80, 3);
  const auto a = mb::fit_pi1(in.X, in.A, fixed_config(1.2, 1e-3, mb::NormalSolver::pseudo_inverse));
  const auto b = mb::fit_pi1(in.X, in.A, fixed_config(1.2, 1e-3, mb::NormalSolver::factored));
  const mb::Vector fa = a.evaluate_raw(in.X), fb = b.evaluate_raw(in.X);
  EXPECT_LT((fa - fb).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + fa.cwiseAbs().maxCoeff()));
}

TEST(BalancePi1, DuplicatedUnitsMatchUnitLevelOracle) {
  // Atoms: 4 distinct covariate values, repeated.
  const int n = 36;
  mb::Matrix X(n, 1);
  mb::Vector A(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = static_cast<double>(i % 4);
    A(i) = (i % 3 == 0 || i % 4 == 3) ? 1.0 : 0.0;
  }
  auto cfg = fixed_config(1.0, 1e-2, mb::NormalSolver::pseudo_inverse);
  const mb::BalanceFit fit = mb::fit_pi1(X, A, cfg);
  EXPECT_EQ(fit.anchors.rows(), 4);
  const mb::OracleResult orc = mb::numeric_minimax_oracle(mb::MinimaxFamily::pi1, X, A, mb::Vector(), cfg);
  const mb::Vector unit_level = mb::gram(*cfg.pi_kernel, X) * orc.coefficients;
  EXPECT_LT((fit.evaluate_raw(X) - unit_level).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BalancePi1, SatisfiesUnitLevelNormalEquations) {
  const Instance in = make_instance(60, 4);
  const auto cfg = fixed_config(1.0, 1e-3, mb::NormalSolver::factored);
  const mb::BalanceFit fit = mb::fit_pi1(in.X, in.A, cfg);
  const double n = 60;
  const mb::Matrix K = mb::gram(*cfg.pi_kernel, in.X);
  mb::Matrix B = K / (4 * n);
  B.diagonal().array() += cfg.lambda_h;
  const mb::Matrix Gamma = 0.25 * K * B.inverse();
  const mb::Vector d = mb::Vector::Ones(60) - in.A;
  const mb::Matrix DK = d.asDiagonal() * K;
  const mb::Matrix H = DK.transpose() * Gamma * DK + n * n * cfg.lambda_pi * K;
  const mb::Vector rhs = K * d.asDiagonal() * Gamma * mb::Vector::Ones(60);
  EXPECT_LT((H * fit.coefficients - rhs).norm(), 1e-8 * rhs.norm());
}

TEST(BalancePi1, WeightsRespectClipAndBeatConstantResidual) {
  const Instance in = make_instance(300, 5);
  mb::BalancingConfig cfg;
  const mb::BalanceFit fit = mb::fit_pi1(in.X, in.A, cfg);
  const mb::Vector w = fit.evaluate(in.X);
  EXPECT_GE(w.minCoeff(), 1.0);
  EXPECT_LE(w.maxCoeff(), 1.0 / cfg.trim_epsilon);
  const mb::Vector d = mb::Vector::Ones(300) - in.A;
  const double constant = 300.0 / d.sum();
  const double fitted = mb::balancing_residual(d.cwiseProduct(w), fit.kernel, in.X, mb::Vector::Ones(300));
  const double naive = mb::balancing_residual(d * constant, fit.kernel, in.X, mb::Vector::Ones(300));
  EXPECT_LE(fitted, naive);
  EXPECT_TRUE(fit.tuned);
}

TEST(BalancePi1, TwoControlUnits) {
  mb::Matrix X(2, 1);
  X << 0.0, 1.0;
  mb::Vector A = mb::Vector::Zero(2);
  auto cfg = fixed_config(1.0, 1e-2, mb::NormalSolver::automatic);
  const mb::BalanceFit fit = mb::fit_pi1(X, A, cfg);
  const mb::Vector w = fit.evaluate(X);
  const double fitted = mb::balancing_residual(w, fit.kernel, X, mb::Vector::Ones(2));
  const double naive = mb::balancing_residual(mb::Vector::Ones(2), fit.kernel, X, mb::Vector::Ones(2));
  EXPECT_LE(fitted, naive + 1e-12);
}

TEST(BalancePi1, AllTreatedIsAnError) {
  const Instance in = make_instance(30, 6);
  EXPECT_THROW(mb::fit_pi1(in.X, mb::Vector::Ones(30), mb::BalancingConfig()), mb::Error);
  mb::Vector bad = in.A;
  bad(0) = 0.5;
  EXPECT_THROW(mb::fit_pi1(in.X, bad, mb::BalancingConfig()), mb::Error);
}

TEST(BalancePi2, AllTreatedGivesZeroWeights) {
  const Instance in = make_instance(30, 7);
  const mb::Vector ones = mb::Vector::Ones(30);
  const auto fit = mb::fit_pi2(in.MX, ones, ones, fixed_config(1.0, 1e-2, mb::NormalSolver::automatic));
  EXPECT_LT(fit.evaluate(in.MX).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(mb::fit_pi2(in.MX, mb::Vector::Zero(30), ones, mb::BalancingConfig()), mb::Error);
}

TEST(BalancingConfig, Validation) {
  mb::BalancingConfig cfg;
  cfg.lambda_pi = 0.0;
  EXPECT_THROW(cfg.validate(), mb::Error);
  cfg = mb::BalancingConfig();
  cfg.trim_epsilon = 0.7;
  EXPECT_THROW(cfg.validate(), mb::Error);
}
