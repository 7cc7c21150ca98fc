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
#include <limits>
#include <random>

#include "medbalance/simlab.hpp"

namespace mb = medbalance;

namespace {

// One covariate cell, binary M1 and M2 independent under A = 1.
mb::DiscreteMultiDgpSpec hand_multi() {
  mb::DiscreteMultiDgpSpec s;
  s.x_support = mb::Matrix::Zero(1, 1);
  s.p_x = mb::Vector::Ones(1);
  s.p_treat = mb::Vector::Constant(1, 0.5);
  s.m1_support.resize(2, 1);
  s.m1_support << 0, 1;
  s.m2_support = s.m1_support;
  s.p_m[1].resize(1, 4);
  s.p_m[1] << 0.2, 0.2, 0.3, 0.3;
  s.p_m[0].resize(1, 4);
  s.p_m[0] << 0.42, 0.28, 0.18, 0.12;
  s.mu[1].resize(1, 4);
  s.mu[1] << 1, 2, 3, 6;
  s.mu[0] = mb::Matrix::Zero(1, 4);
  return s;
}

}  // namespace

TEST(DiscreteSingle, HandComputedValue) {
  mb::DiscreteDgpSpec s;
  s.x_support.resize(2, 1);
  s.x_support << 0, 1;
  s.p_x.resize(2);
  s.p_x << 0.4, 0.6;
  s.p_treat = mb::Vector::Constant(2, 0.5);
  s.m_support = s.x_support;
  s.p_m[0].resize(2, 2);
  s.p_m[0] << 0.7, 0.3, 0.2, 0.8;
  s.p_m[1].resize(2, 2);
  s.p_m[1] << 0.5, 0.5, 0.5, 0.5;
  s.mu[1].resize(2, 2);
  s.mu[1] << 1, 3, 2, 5;
  s.mu[0] = mb::Matrix::Zero(2, 2);
  EXPECT_NEAR(mb::enumerate_psi_discrete(s), 3.28, 1e-12);

  s.mu[1] = mb::Matrix::Constant(2, 2, 2.5);
  EXPECT_NEAR(mb::enumerate_psi_discrete(s), 2.5, 1e-12);
  s.mu[1] << 1, 1, 4, 4;
  s.p_m[1] = s.p_m[0];
  EXPECT_NEAR(mb::enumerate_psi_discrete(s), 0.4 * 1 + 0.6 * 4, 1e-12);
}

TEST(DiscreteSingle, FrozenDefaults) {
  const mb::DiscreteDgpSpec s = mb::discrete_single_default();
  const double psi = mb::enumerate_psi_discrete(s);
  const auto arms = mb::enumerate_arm_means(s);
  EXPECT_NEAR(psi, mb::DiscreteSingleDgp(s).psi0(), 0.0);
  EXPECT_GT(arms[1], psi);
  EXPECT_GT(psi, arms[0]);
}

TEST(DiscreteSingle, EnumerationMatchesLargeMonteCarlo) {
  const mb::DiscreteDgpSpec s = mb::discrete_single_default();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  const int N = 400000;
  double sum = 0, sq = 0;
  for (int i = 0; i < N; ++i) {
    const mb::Index x = mb::detail::draw_index(s.p_x.transpose(), u(rng));
    const mb::Index m = mb::detail::draw_index(s.p_m[0].row(x), u(rng));
    const double v = s.mu[1](x, m);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / N, se = std::sqrt((sq / N - mean * mean) / (N - 1));
  EXPECT_LT(std::abs(mean - mb::enumerate_psi_discrete(s)), 3 * se);
}

TEST(DiscreteSingle, PositivityCheckedAtConstruction) {
  mb::DiscreteDgpSpec s = mb::discrete_single_default();
  s.p_treat(2) = 0.995;
  EXPECT_THROW(mb::DiscreteSingleDgp{s}, mb::Error);
  s = mb::discrete_single_default();
  s.p_m[0].row(1) << 0.999, 0.0005, 0.0005;
  EXPECT_THROW(mb::DiscreteSingleDgp{s}, mb::Error);
  s = mb::discrete_single_default();
  s.p_x(0) += 1e-6;
  EXPECT_THROW(mb::DiscreteSingleDgp{s}, mb::Error);
}

TEST(DiscreteSingle, SamplerIsDeterministicAndBinaryWhenAsked) {
  mb::DiscreteSingleDgp g(mb::discrete_single_binary());
  const mb::Dataset a = g.sample(500, 9), b = g.sample(500, 9);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_EQ(a.A, b.A);
  EXPECT_EQ(a.outcome_type, mb::OutcomeType::binary);
  for (mb::Index i = 0; i < a.n(); ++i) EXPECT_TRUE(a.Y(i) == 0.0 || a.Y(i) == 1.0);
}

TEST(DiscreteMulti, HandComputedInstance) {
  const mb::DiscreteMultiTruth t = mb::enumerate_eie_discrete(hand_multi());
  EXPECT_NEAR(t.eie[0], 0.9, 1e-12);
  EXPECT_NEAR(t.eie[1], 0.22, 1e-12);
  EXPECT_NEAR(t.total_indirect, 1.06, 1e-12);
  EXPECT_NEAR(t.treated_mean, 3.3, 1e-12);
  EXPECT_NEAR(t.interaction(), -0.06, 1e-12);
}

TEST(DiscreteMulti, NullCases) {
  mb::DiscreteMultiDgpSpec s = hand_multi();
  // Same M1 marginal in both arms.
  s.p_m[0] << 0.24, 0.16, 0.36, 0.24;
  EXPECT_NEAR(mb::enumerate_eie_discrete(s).eie[0], 0.0, 1e-12);
  s = hand_multi();
  s.mu[1] << 1, 2, 1, 2;  // free of M1
  EXPECT_NEAR(mb::enumerate_eie_discrete(s).eie[0], 0.0, 1e-12);
  EXPECT_NEAR(mb::enumerate_eie_discrete(mb::discrete_multi_default(true)).eie[0], 0.0, 1e-12);
}

TEST(DiscreteMulti, FrozenDefaults) {
  const mb::DiscreteMultiTruth t = mb::enumerate_eie_discrete(mb::discrete_multi_default());
  EXPECT_NEAR(t.eie[0], 0.496074, 1e-6);
  EXPECT_NEAR(t.eie[1], 0.318196, 1e-6);
  EXPECT_NEAR(t.total_indirect, 0.765457, 1e-6);
  EXPECT_NEAR(t.interaction(), -0.0488124, 1e-6);
  EXPECT_NEAR(t.treated_mean, 4.18024, 1e-5);
}

TEST(DiscreteMulti, TrueNuisancesAreConsistent) {
  mb::DiscreteMultiDgp g(mb::discrete_multi_default());
  const mb::MultiDataset d = g.sample(200, 4);
  EXPECT_EQ(d.k(), 2);
  for (int j = 0; j < 2; ++j) {
    const mb::MultiNuisances nu = g.truth(j);
    const mb::Matrix mjx = mb::hcat(d.mj(j), d.X);
    const mb::Vector pi = nu.pi(d.X), rho = nu.rho(mjx);
    for (mb::Index i = 0; i < d.n(); ++i) {
      EXPECT_GT(pi(i), 1.0);
      EXPECT_GT(rho(i), 0.0);
    }
  }
}

TEST(PaperDgp, MarginalsAndPropensity) {
  const mb::Dataset d = mb::gen_paper_dgp(1000000, 5);
  EXPECT_NEAR(d.X.col(2).mean(), 0.5, 0.01);
  double hit = 0, cnt = 0;
  for (mb::Index i = 0; i < d.n(); ++i)
    if (std::abs(d.X(i, 0)) < 0.1 && std::abs(d.X(i, 1)) < 0.1 && d.X(i, 2) == 0.0) {
      cnt += 1;
      hit += d.A(i);
    }
  EXPECT_GT(cnt, 2000);
  EXPECT_NEAR(hit / cnt, mb::expit(0.35), 0.02);
}

TEST(PaperDgp, MediatorIsBimodalAroundCenter) {
  const mb::Dataset d = mb::gen_paper_dgp(100000, 6);
  int near_modes = 0, near_center = 0;
  for (mb::Index i = 0; i < d.n(); ++i) {
    const double r = d.M(i, 0) - mb::PaperDgp::mediator_center(d.X(i, 0), d.X(i, 1), d.X(i, 2), d.A(i));
    near_modes += (std::abs(std::abs(r) - 4.0) < 1.0) ? 1 : 0;
    near_center += (std::abs(r) < 1.0) ? 1 : 0;
  }
  EXPECT_GT(near_modes, 0.65 * d.n());
  EXPECT_LT(near_center, 0.01 * d.n());
}

TEST(PaperDgp, MonteCarloOracle) {
  const mb::McValue a = mb::true_psi_paper_dgp(1000000, 1), b = mb::true_psi_paper_dgp(1000000, 2);
  EXPECT_LT(std::abs(a.value - b.value), 3 * std::hypot(a.mc_se, b.mc_se));
  EXPECT_GE(a.value, 9.6);
  EXPECT_LE(a.value, 10.0);
  EXPECT_LT(std::abs(a.value - mb::PaperDgp().psi0()), 3 * a.mc_se);

  // Drawing the mediator from the treated arm shifts it by 0.8 at slope 0.3.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  double s = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double x1 = z(rng), x2 = z(rng), x3 = u(rng) < 0.5 ? 1.0 : 0.0;
    const double m = mb::PaperDgp::mediator_center(x1, x2, x3, 1.0) + (u(rng) < 0.5 ? -4.0 : 4.0) + z(rng);
    s += mb::PaperDgp::outcome_mean(x1, x2, x3, m, 1.0);
  }
  EXPECT_NEAR(s / N - a.value, 0.24, 0.05);
  EXPECT_THROW((void)mb::true_psi_paper_dgp(1, 0), mb::Error);
}

TEST(PaperDgp, TrueWeightsAreValid) {
  mb::PaperDgp g;
  const mb::Dataset d = g.sample(2000, 8);
  const mb::Vector p1 = g.pi1(d.X), p2 = g.pi2(d.mx()), e = g.propensity(d.X);
  for (mb::Index i = 0; i < d.n(); ++i) {
    EXPECT_NEAR(p1(i), 1.0 / (1.0 - e(i)), 1e-9 * p1(i));
    EXPECT_GT(p2(i), 0.0);
  }
}

TEST(GaussianMulti, ClosedFormsMatchMonteCarlo) {
  mb::GaussianMultiDgp g;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  auto mu1 = [&](double x1, double x2, double x3, double m1, double m2) {
    return 2.0 + x1 - 0.5 * x2 + x3 + 1.0 + g.b1 * m1 + g.b2 * m2 + g.b12 * m1 * m2;
  };
  auto m1_of = [&](double x1, double x3, double a) { return 1.0 + 0.8 * x1 - 0.5 * x3 + 0.8 * a + z(rng); };
  auto m2_of = [&](double m1, double x2, double x3, double a) {
    return 0.5 * m1 + 0.5 - 0.4 * x2 + 0.6 * x3 + 0.5 * a + z(rng);
  };
  const int N = 1000000;
  std::vector<double> e0(N), e1(N), tot(N), tm(N);
  for (int i = 0; i < N; ++i) {
    const double x1 = z(rng), x2 = z(rng), x3 = u(rng) < 0.5 ? 1.0 : 0.0;
    const double m1t = m1_of(x1, x3, 1), m2t = m2_of(m1t, x2, x3, 1);
    const double m1c = m1_of(x1, x3, 0), m2c = m2_of(m1c, x2, x3, 0);
    // Independent treated-arm draws for the other mediator's marginal.
    const double m1o = m1_of(x1, x3, 1), m2o = m2_of(m1_of(x1, x3, 1), x2, x3, 1);
    e0[i] = mu1(x1, x2, x3, m1t, m2o) - mu1(x1, x2, x3, m1c, m2o);
    // M2's own mechanism shift, holding the M1 marginal at its treated law.
    const double m2_ctrl = m2_of(m1_of(x1, x3, 0), x2, x3, 0);
    e1[i] = mu1(x1, x2, x3, m1o, m2t) - mu1(x1, x2, x3, m1o, m2_ctrl);
    tot[i] = mu1(x1, x2, x3, m1t, m2t) - mu1(x1, x2, x3, m1c, m2c);
    tm[i] = mu1(x1, x2, x3, m1t, m2t);
  }
  auto check = [&](const std::vector<double>& v, double truth) {
    const double m = mb::mean_of(v), se = mb::sd_of(v) / std::sqrt(static_cast<double>(N));
    EXPECT_LT(std::abs(m - truth), 4 * se) << m << " vs " << truth;
  };
  check(e0, g.eie(0));
  check(e1, g.eie(1));
  check(tot, g.total_indirect());
  check(tm, g.treated_mean());
  EXPECT_THROW((void)g.eie(2), mb::Error);
}

TEST(Replications, MetricIdentitiesAndNonFiniteRetention) {
  const std::vector<double> est{1.2, 0.8, 1.1, 0.95, 1.4};
  std::vector<std::pair<double, double>> ci{{1.0, 1.5}, {0.5, 0.9}, {0.9, 1.2}, {0.9, 1.1}, {1.3, 1.5}};
  const mb::ReplicationRow r = mb::summarize_replications("x", 10, est, 1.0, &ci);
  EXPECT_GE(r.rmse, std::abs(r.mean_bias));
  EXPECT_GE(r.rmse * r.rmse, r.sd * r.sd * 4.0 / 5.0 - 1e-9);
  EXPECT_GE(r.sd, 0.0);
  EXPECT_DOUBLE_EQ(*r.coverage, 0.6);
  const mb::ReplicationRow bad =
      mb::summarize_replications("tts", 10, {1.0, std::numeric_limits<double>::infinity(), 1.0}, 1.0);
  EXPECT_EQ(bad.nonfinite, 1);
  EXPECT_TRUE(std::isinf(bad.mean_bias));
  EXPECT_DOUBLE_EQ(bad.median_bias, 0.0);
  EXPECT_FALSE(bad.coverage.has_value());
}

TEST(Replications, DeterministicAcrossRunsAndThreadCounts) {
  mb::DiscreteSingleDgp g(mb::discrete_single_default());
  const auto suite = mb::paper_estimator_suite({}, {}, true, 3);
  const mb::ReplicationResult a = mb::run_replications(g, 300, 4, 17, suite, g.psi0(), 1);
  const mb::ReplicationResult b = mb::run_replications(g, 300, 4, 17, suite, g.psi0(), 3);
  EXPECT_EQ(a.table.to_csv(), b.table.to_csv());
  EXPECT_EQ(a.table.rows.size(), 3u);
  EXPECT_NE(a.table.find("two-stage"), nullptr);
  EXPECT_TRUE(a.table.find("two-stage")->coverage.has_value());
  EXPECT_FALSE(a.table.find("naive")->coverage.has_value());
  const std::string csv = a.table.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "estimator,n,reps,mean_bias,median_bias,rmse,sd,coverage,nonfinite");
}
