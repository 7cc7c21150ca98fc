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

#ifndef MEDBALANCE_SIMLAB_HPP
#define MEDBALANCE_SIMLAB_HPP

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "medbalance/dataset.hpp"
#include "medbalance/error.hpp"
#include "medbalance/multi.hpp"
#include "medbalance/parallel.hpp"
#include "medbalance/report.hpp"
#include "medbalance/single.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

inline double expit(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

// Three covariates (two Gaussian, one Bernoulli), logistic treatment, a
// bimodal Gaussian-mixture mediator and a Gaussian outcome with treatment
// by mediator interaction. Columns: X = (X1, X2, X3), M scalar.
class PaperDgp final : public SingleDgp {
 public:
  double delta = 4.0;
  double p_left = 0.5;
  double mediator_sd = 1.0;
  double outcome_sd = 1.0;

  [[nodiscard]] static double logit_treat(double x1, double x2, double x3) {
    return 0.35 + 0.1 * x1 - 0.2 * x2 + 0.3 * x3 - 0.15 * x1 * x1 + 0.25 * x2 * x3;
  }
  [[nodiscard]] static double mediator_center(double x1, double x2, double x3, double a) {
    return 2.4 + 1.6 * x1 - 1.2 * x2 + 2.2 * x3 + 0.8 * a + 1.5 * x1 * x1 - 1.8 * x2 * x3;
  }
  [[nodiscard]] static double outcome_mean(double x1, double x2, double x3, double m, double a) {
    return 6.4 + 2.7 * x1 + 0.7 * x2 - 3.6 * x3 - 0.8 * x2 * x2 + 2.5 * x1 * a + 3.2 * m * a - 2.9 * m + 4.5 * a;
  }

  [[nodiscard]] double mediator_density(double m, double x1, double x2, double x3, double a) const {
    const double c = mediator_center(x1, x2, x3, a);
    return p_left * normal_pdf(m, c - delta, mediator_sd) + (1 - p_left) * normal_pdf(m, c + delta, mediator_sd);
  }

  [[nodiscard]] Dataset sample(Index n, std::uint64_t seed) const override {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Dataset d;
    d.X.resize(n, 3);
    d.A.resize(n);
    d.M.resize(n, 1);
    d.Y.resize(n);
    for (Index i = 0; i < n; ++i) {
      const double x1 = z(rng), x2 = z(rng), x3 = u(rng) < 0.5 ? 1.0 : 0.0;
      const double a = u(rng) < expit(logit_treat(x1, x2, x3)) ? 1.0 : 0.0;
      const double side = u(rng) < p_left ? -delta : delta;
      const double m = mediator_center(x1, x2, x3, a) + side + mediator_sd * z(rng);
      d.X.row(i) << x1, x2, x3;
      d.A(i) = a;
      d.M(i, 0) = m;
      d.Y(i) = outcome_mean(x1, x2, x3, m, a) + outcome_sd * z(rng);
    }
    return d;
  }

  // Exact value: the mixture is symmetric, so E[M | A = 0, X] is its center
  // and psi0 = 10.9 - 3.6 E[X3] - 0.8 E[X2^2] + 0.3 E[center(X, 0)] = 9.8.
  [[nodiscard]] double psi0() const override { return 9.8; }

  [[nodiscard]] Vector mu1(const Matrix& MX) const override {
    Vector out(MX.rows());
    for (Index i = 0; i < MX.rows(); ++i) out(i) = outcome_mean(MX(i, 1), MX(i, 2), MX(i, 3), MX(i, 0), 1.0);
    return out;
  }
  [[nodiscard]] Vector mu2(const Matrix& X) const override {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i)
      out(i) = outcome_mean(X(i, 0), X(i, 1), X(i, 2), mediator_center(X(i, 0), X(i, 1), X(i, 2), 0.0), 1.0);
    return out;
  }
  [[nodiscard]] Vector propensity(const Matrix& X) const override {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = expit(logit_treat(X(i, 0), X(i, 1), X(i, 2)));
    return out;
  }
  [[nodiscard]] Vector pi1(const Matrix& X) const override {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = 1.0 + std::exp(logit_treat(X(i, 0), X(i, 1), X(i, 2)));
    return out;
  }
  [[nodiscard]] Vector pi2(const Matrix& MX) const override {
    Vector out(MX.rows());
    for (Index i = 0; i < MX.rows(); ++i) {
      const double x1 = MX(i, 1), x2 = MX(i, 2), x3 = MX(i, 3), m = MX(i, 0);
      out(i) = mediator_density(m, x1, x2, x3, 0.0) /
               (mediator_density(m, x1, x2, x3, 1.0) * expit(logit_treat(x1, x2, x3)));
    }
    return out;
  }
};

inline Dataset gen_paper_dgp(Index n, std::uint64_t seed) { return PaperDgp().sample(n, seed); }

struct McValue {
  double value = 0.0;
  double mc_se = 0.0;
};

// Monte Carlo oracle: average the treated outcome mean over draws of the
// mediator from its control-arm law.
inline McValue true_psi_paper_dgp(Index mc_size, std::uint64_t seed) {
  if (mc_size < 2) fail_validation("true_psi_paper_dgp", "mc_size must be at least 2");
  PaperDgp g;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double s = 0.0, ss = 0.0;
  for (Index i = 0; i < mc_size; ++i) {
    const double x1 = z(rng), x2 = z(rng), x3 = u(rng) < 0.5 ? 1.0 : 0.0;
    const double side = u(rng) < g.p_left ? -g.delta : g.delta;
    const double m = PaperDgp::mediator_center(x1, x2, x3, 0.0) + side + g.mediator_sd * z(rng);
    const double v = PaperDgp::outcome_mean(x1, x2, x3, m, 1.0);
    s += v;
    ss += v * v;
  }
  const double N = static_cast<double>(mc_size);
  const double mean = s / N;
  return {mean, std::sqrt(std::max(0.0, ss / N - mean * mean) / (N - 1))};
}

namespace detail {

// Row lookup on a finite support.
class SupportIndex {
 public:
  SupportIndex() = default;
  explicit SupportIndex(const Matrix& support) {
    for (Index r = 0; r < support.rows(); ++r) map_[key(support.row(r))] = r;
  }
  template <class Row>
  [[nodiscard]] Index find(const Row& row, const char* what) const {
    auto it = map_.find(key(row));
    if (it == map_.end()) fail_validation("discrete dgp", std::string(what) + " value outside the support");
    return it->second;
  }

 private:
  template <class Row>
  static std::vector<double> key(const Row& row) {
    std::vector<double> k(static_cast<std::size_t>(row.size()));
    for (Index i = 0; i < row.size(); ++i) k[static_cast<std::size_t>(i)] = row(i);
    return k;
  }
  std::map<std::vector<double>, Index> map_;
};

inline Index draw_index(const Eigen::Ref<const RowVector>& probs, double u) {
  double c = 0.0;
  for (Index k = 0; k < probs.size(); ++k) {
    c += probs(k);
    if (u < c) return k;
  }
  return probs.size() - 1;
}

inline void check_law(const Eigen::Ref<const RowVector>& p, const char* what) {
  if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-10)
    fail_validation("discrete dgp", std::string(what) + " must be a probability vector");
}

}  // namespace detail

// Finite covariate and mediator supports with tabulated laws; the outcome is
// mu[a](x, m) plus Gaussian noise. Everything is enumerable.
struct DiscreteDgpSpec {
  Matrix x_support;              // rows: covariate values
  Vector p_x;                    // law of X
  Vector p_treat;                // p(A = 1 | x)
  Matrix m_support;              // rows: mediator values
  std::array<Matrix, 2> p_m;     // p_m[a](x, m) = p(M = m | A = a, X = x)
  std::array<Matrix, 2> mu;      // mu[a](x, m) = E[Y | A = a, M = m, X = x]
  double sigma_y = 1.0;
  double positivity_floor = 0.01;
  bool binary_outcome = false;  // Y ~ Bernoulli(mu) instead of Gaussian noise

  void validate() const {
    const Index nx = x_support.rows(), nm = m_support.rows();
    if (binary_outcome)
      for (int a = 0; a < 2; ++a)
        if ((mu[a].array() <= 0.0).any() || (mu[a].array() >= 1.0).any())
          fail_validation("DiscreteDgpSpec", "binary outcome means must lie in (0, 1)");
    if (p_x.size() != nx || p_treat.size() != nx) fail_validation("DiscreteDgpSpec", "covariate tables differ in size");
    detail::check_law(p_x.transpose(), "p_x");
    for (Index x = 0; x < nx; ++x)
      if (p_treat(x) < positivity_floor || p_treat(x) > 1 - positivity_floor)
        fail_validation("DiscreteDgpSpec", "treatment positivity violated", {{"x", to_text(x)}});
    for (int a = 0; a < 2; ++a) {
      if (p_m[a].rows() != nx || p_m[a].cols() != nm || mu[a].rows() != nx || mu[a].cols() != nm)
        fail_validation("DiscreteDgpSpec", "mediator tables have the wrong shape");
      for (Index x = 0; x < nx; ++x) {
        detail::check_law(p_m[a].row(x), "p_m");
        if (p_m[a].row(x).minCoeff() < positivity_floor)
          fail_validation("DiscreteDgpSpec", "mediator positivity violated", {{"x", to_text(x)}});
      }
    }
  }
};

inline double enumerate_psi_discrete(const DiscreteDgpSpec& s) {
  s.validate();
  double psi = 0.0;
  for (Index x = 0; x < s.x_support.rows(); ++x)
    for (Index m = 0; m < s.m_support.rows(); ++m) psi += s.p_x(x) * s.mu[1](x, m) * s.p_m[0](x, m);
  return psi;
}

// E[Y(a, M(a))] for a = 0, 1.
inline std::array<double, 2> enumerate_arm_means(const DiscreteDgpSpec& s) {
  s.validate();
  std::array<double, 2> out{0.0, 0.0};
  for (int a = 0; a < 2; ++a)
    for (Index x = 0; x < s.x_support.rows(); ++x)
      out[static_cast<std::size_t>(a)] +=
          s.p_x(x) * s.mu[static_cast<std::size_t>(a)].row(x).dot(s.p_m[static_cast<std::size_t>(a)].row(x));
  return out;
}

class DiscreteSingleDgp final : public SingleDgp {
 public:
  explicit DiscreteSingleDgp(DiscreteDgpSpec spec)
      : s_(std::move(spec)), xi_(s_.x_support), mi_(s_.m_support), psi0_(enumerate_psi_discrete(s_)) {}

  [[nodiscard]] const DiscreteDgpSpec& spec() const { return s_; }

  [[nodiscard]] Dataset sample(Index n, std::uint64_t seed) const override {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z;
    Dataset d;
    d.X.resize(n, s_.x_support.cols());
    d.M.resize(n, s_.m_support.cols());
    d.A.resize(n);
    d.Y.resize(n);
    for (Index i = 0; i < n; ++i) {
      const Index x = detail::draw_index(s_.p_x.transpose(), u(rng));
      const int a = u(rng) < s_.p_treat(x) ? 1 : 0;
      const Index m = detail::draw_index(s_.p_m[static_cast<std::size_t>(a)].row(x), u(rng));
      d.X.row(i) = s_.x_support.row(x);
      d.M.row(i) = s_.m_support.row(m);
      d.A(i) = a;
      const double mu = s_.mu[static_cast<std::size_t>(a)](x, m);
      d.Y(i) = s_.binary_outcome ? (u(rng) < mu ? 1.0 : 0.0) : mu + s_.sigma_y * z(rng);
    }
    if (s_.binary_outcome) d.outcome_type = OutcomeType::binary;
    return d;
  }

  [[nodiscard]] double psi0() const override { return psi0_; }

  [[nodiscard]] Vector mu1(const Matrix& MX) const override {
    const Index dm = s_.m_support.cols();
    Vector out(MX.rows());
    for (Index i = 0; i < MX.rows(); ++i)
      out(i) = s_.mu[1](xi_.find(MX.row(i).tail(MX.cols() - dm), "X"), mi_.find(MX.row(i).head(dm), "M"));
    return out;
  }
  [[nodiscard]] Vector mu2(const Matrix& X) const override {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) {
      const Index x = xi_.find(X.row(i), "X");
      out(i) = s_.mu[1].row(x).dot(s_.p_m[0].row(x));
    }
    return out;
  }
  [[nodiscard]] Vector propensity(const Matrix& X) const override {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = s_.p_treat(xi_.find(X.row(i), "X"));
    return out;
  }
  [[nodiscard]] Vector pi1(const Matrix& X) const override {
    return propensity(X).unaryExpr([](double p) { return 1.0 / (1.0 - p); });
  }
  [[nodiscard]] Vector pi2(const Matrix& MX) const override {
    const Index dm = s_.m_support.cols();
    Vector out(MX.rows());
    for (Index i = 0; i < MX.rows(); ++i) {
      const Index x = xi_.find(MX.row(i).tail(MX.cols() - dm), "X");
      const Index m = mi_.find(MX.row(i).head(dm), "M");
      out(i) = s_.p_m[0](x, m) / (s_.p_m[1](x, m) * s_.p_treat(x));
    }
    return out;
  }

 private:
  DiscreteDgpSpec s_;
  detail::SupportIndex xi_, mi_;
  double psi0_;
};

// Two binary covariates and a three-level mediator.
inline DiscreteDgpSpec discrete_single_default() {
  DiscreteDgpSpec s;
  s.x_support.resize(4, 2);
  s.x_support << 0, 0, 0, 1, 1, 0, 1, 1;
  s.p_x.resize(4);
  s.p_x << 0.3, 0.2, 0.25, 0.25;
  s.p_treat.resize(4);
  s.p_treat << 0.4, 0.55, 0.6, 0.7;
  s.m_support.resize(3, 1);
  s.m_support << 0, 1, 2;
  for (int a = 0; a < 2; ++a) {
    s.p_m[static_cast<std::size_t>(a)].resize(4, 3);
    s.mu[static_cast<std::size_t>(a)].resize(4, 3);
    for (Index x = 0; x < 4; ++x) {
      const double x1 = s.x_support(x, 0), x2 = s.x_support(x, 1);
      const double e1 = std::exp(-0.3 + 0.9 * a + 0.5 * x1 - 0.4 * x2);
      const double e2 = std::exp(-0.8 + 1.4 * a + 0.3 * x1 + 0.2 * x2);
      const double z = 1.0 + e1 + e2;
      s.p_m[static_cast<std::size_t>(a)].row(x) << 1.0 / z, e1 / z, e2 / z;
      for (Index m = 0; m < 3; ++m) {
        const double mv = static_cast<double>(m);
        s.mu[static_cast<std::size_t>(a)](x, m) =
            1.0 + 0.5 * x1 - 0.7 * x2 + 0.8 * mv + a * (1.5 + 1.2 * mv - 0.6 * x1 * mv);
      }
    }
  }
  return s;
}

// Binary outcome on the same supports, with success probabilities in
// (0.25, 0.8).
inline DiscreteDgpSpec discrete_single_binary() {
  DiscreteDgpSpec s = discrete_single_default();
  s.binary_outcome = true;
  for (int a = 0; a < 2; ++a)
    for (Index x = 0; x < 4; ++x)
      for (Index m = 0; m < 3; ++m) {
        const double x1 = s.x_support(x, 0), x2 = s.x_support(x, 1), mv = static_cast<double>(m);
        s.mu[static_cast<std::size_t>(a)](x, m) = expit(-0.6 + 0.3 * x1 - 0.2 * x2 + 0.35 * mv + a * (0.3 + 0.25 * mv));
      }
  return s;
}

// ---------------------------------------------------------------------------
// Two mediators on finite supports

struct DiscreteMultiDgpSpec {
  Matrix x_support;
  Vector p_x;
  Vector p_treat;
  Matrix m1_support;
  Matrix m2_support;
  // p_m[a](x, v * n2 + u) = p(M1 = v, M2 = u | A = a, X = x); mu likewise.
  std::array<Matrix, 2> p_m;
  std::array<Matrix, 2> mu;
  double sigma_y = 1.0;
  double positivity_floor = 0.01;

  void validate() const {
    const Index nx = x_support.rows(), nm = m1_support.rows() * m2_support.rows();
    if (p_x.size() != nx || p_treat.size() != nx)
      fail_validation("DiscreteMultiDgpSpec", "covariate tables differ in size");
    detail::check_law(p_x.transpose(), "p_x");
    for (Index x = 0; x < nx; ++x)
      if (p_treat(x) < positivity_floor || p_treat(x) > 1 - positivity_floor)
        fail_validation("DiscreteMultiDgpSpec", "treatment positivity violated", {{"x", to_text(x)}});
    for (int a = 0; a < 2; ++a) {
      if (p_m[a].rows() != nx || p_m[a].cols() != nm || mu[a].rows() != nx || mu[a].cols() != nm)
        fail_validation("DiscreteMultiDgpSpec", "mediator tables have the wrong shape");
      for (Index x = 0; x < nx; ++x) {
        detail::check_law(p_m[a].row(x), "p_m");
        if (p_m[a].row(x).minCoeff() < positivity_floor)
          fail_validation("DiscreteMultiDgpSpec", "mediator positivity violated", {{"x", to_text(x)}});
      }
    }
  }
};

struct DiscreteMultiTruth {
  double eie[2] = {0.0, 0.0};
  double total_indirect = 0.0;
  double treated_mean = 0.0;
  [[nodiscard]] double interaction() const { return total_indirect - eie[0] - eie[1]; }
};

inline DiscreteMultiTruth enumerate_eie_discrete(const DiscreteMultiDgpSpec& s) {
  s.validate();
  const Index n1 = s.m1_support.rows(), n2 = s.m2_support.rows();
  DiscreteMultiTruth t;
  for (Index x = 0; x < s.x_support.rows(); ++x) {
    Vector q1[2] = {Vector::Zero(n1), Vector::Zero(n1)}, q2[2] = {Vector::Zero(n2), Vector::Zero(n2)};
    for (int a = 0; a < 2; ++a)
      for (Index v = 0; v < n1; ++v)
        for (Index u = 0; u < n2; ++u) {
          q1[a](v) += s.p_m[a](x, v * n2 + u);
          q2[a](u) += s.p_m[a](x, v * n2 + u);
        }
    for (Index v = 0; v < n1; ++v)
      for (Index u = 0; u < n2; ++u) {
        const Index c = v * n2 + u;
        const double m = s.mu[1](x, c);
        t.eie[0] += s.p_x(x) * m * (q1[1](v) - q1[0](v)) * q2[1](u);
        t.eie[1] += s.p_x(x) * m * q1[1](v) * (q2[1](u) - q2[0](u));
        t.total_indirect += s.p_x(x) * m * (s.p_m[1](x, c) - s.p_m[0](x, c));
        t.treated_mean += s.p_x(x) * m * s.p_m[1](x, c);
      }
  }
  return t;
}

// Mediator columns are [M1, M2], block j = 0 is M1.
class DiscreteMultiDgp final : public MultiDgp {
 public:
  explicit DiscreteMultiDgp(DiscreteMultiDgpSpec spec)
      : s_(std::move(spec)), xi_(s_.x_support), m1i_(s_.m1_support), m2i_(s_.m2_support),
        truth_(enumerate_eie_discrete(s_)) {}

  [[nodiscard]] const DiscreteMultiDgpSpec& spec() const { return s_; }
  [[nodiscard]] const DiscreteMultiTruth& enumerated() const { return truth_; }

  [[nodiscard]] MultiDataset sample(Index n, std::uint64_t seed) const override {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z;
    const Index d1 = s_.m1_support.cols(), d2 = s_.m2_support.cols(), n2 = s_.m2_support.rows();
    MultiDataset d;
    d.X.resize(n, s_.x_support.cols());
    d.M.resize(n, d1 + d2);
    d.A.resize(n);
    d.Y.resize(n);
    d.blocks = {detail::index_range(0, d1), detail::index_range(d1, d2)};
    for (Index i = 0; i < n; ++i) {
      const Index x = detail::draw_index(s_.p_x.transpose(), u(rng));
      const int a = u(rng) < s_.p_treat(x) ? 1 : 0;
      const Index c = detail::draw_index(s_.p_m[static_cast<std::size_t>(a)].row(x), u(rng));
      d.X.row(i) = s_.x_support.row(x);
      d.M.row(i) << s_.m1_support.row(c / n2), s_.m2_support.row(c % n2);
      d.A(i) = a;
      d.Y(i) = s_.mu[static_cast<std::size_t>(a)](x, c) + s_.sigma_y * z(rng);
    }
    return d;
  }

  [[nodiscard]] int k() const override { return 2; }
  [[nodiscard]] double eie(int j) const override { return truth_.eie[check_j(j)]; }
  [[nodiscard]] double total_indirect() const override { return truth_.total_indirect; }
  [[nodiscard]] double treated_mean() const override { return truth_.treated_mean; }

  [[nodiscard]] JointMediatorLaw mediator_law(int j, int a, const RowVector& x) const override {
    const Index xr = xi_.find(x, "X");
    const Index n1 = s_.m1_support.rows(), n2 = s_.m2_support.rows();
    const Matrix& sj = j == 0 ? s_.m1_support : s_.m2_support;
    const Matrix& sm = j == 0 ? s_.m2_support : s_.m1_support;
    JointMediatorLaw L;
    L.mj.resize(n1 * n2, sj.cols());
    L.mm.resize(n1 * n2, sm.cols());
    L.p.resize(n1 * n2);
    for (Index v = 0; v < n1; ++v)
      for (Index u = 0; u < n2; ++u) {
        const Index c = v * n2 + u;
        L.mj.row(c) = j == 0 ? s_.m1_support.row(v) : s_.m2_support.row(u);
        L.mm.row(c) = j == 0 ? s_.m2_support.row(u) : s_.m1_support.row(v);
        L.p(c) = s_.p_m[static_cast<std::size_t>(a)](xr, c);
      }
    return L;
  }

  [[nodiscard]] Vector propensity(const Matrix& X) const override {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = s_.p_treat(xi_.find(X.row(i), "X"));
    return out;
  }

  // Marginal law of block j given A = a and covariate row x, on its support.
  [[nodiscard]] Vector block_marginal(int j, int a, Index x) const {
    const Index n1 = s_.m1_support.rows(), n2 = s_.m2_support.rows();
    Vector q = Vector::Zero(j == 0 ? n1 : n2);
    for (Index v = 0; v < n1; ++v)
      for (Index u = 0; u < n2; ++u) q(j == 0 ? v : u) += s_.p_m[static_cast<std::size_t>(a)](x, v * n2 + u);
    return q;
  }

  [[nodiscard]] MultiNuisances truth(int j) const override {
    check_j(j);
    const Index dj = (j == 0 ? s_.m1_support : s_.m2_support).cols();
    const Index dm = (j == 0 ? s_.m2_support : s_.m1_support).cols();
    MultiNuisances nu;
    nu.dj = dj;
    nu.dm = dm;
    nu.pi = [this](const Matrix& X) {
      return propensity(X).unaryExpr([](double p) { return 1.0 / p; }).eval();
    };
    nu.rho = [this, j, dj](const Matrix& MjX) {
      Vector out(MjX.rows());
      for (Index i = 0; i < MjX.rows(); ++i) {
        const Index x = xi_.find(MjX.row(i).tail(MjX.cols() - dj), "X");
        const Index v = block_index(j, MjX.row(i).head(dj));
        out(i) = block_marginal(j, 0, x)(v) / block_marginal(j, 1, x)(v);
      }
      return out;
    };
    nu.omega = [this, j, dj, dm](const Matrix& Z) {
      Vector out(Z.rows());
      for (Index i = 0; i < Z.rows(); ++i) {
        Index x, c, v, u;
        locate(j, dj, dm, Z.row(i), x, c, v, u);
        const Vector qj = block_marginal(j, 1, x), qm = block_marginal(1 - j, 1, x);
        out(i) = qj(v) * qm(u) / s_.p_m[1](x, c);
      }
      return out;
    };
    nu.mu = [this, j, dj, dm](const Matrix& Z) {
      Vector out(Z.rows());
      for (Index i = 0; i < Z.rows(); ++i) {
        Index x, c, v, u;
        locate(j, dj, dm, Z.row(i), x, c, v, u);
        out(i) = s_.mu[1](x, c);
      }
      return out;
    };
    nu.law = std::make_shared<const PopulationTreatedLaw>(this, j);
    return nu;
  }

 private:
  static int check_j(int j) {
    if (j != 0 && j != 1) fail_validation("DiscreteMultiDgp", "mediator index must be 0 or 1");
    return j;
  }

  template <class Row>
  [[nodiscard]] Index block_index(int j, const Row& r) const {
    return j == 0 ? m1i_.find(r, "M1") : m2i_.find(r, "M2");
  }

  // Covariate row, joint cell and block positions of z = [m_j, m_-j, x].
  template <class Row>
  void locate(int j, Index dj, Index dm, const Row& z, Index& x, Index& c, Index& v, Index& u) const {
    x = xi_.find(z.tail(z.size() - dj - dm), "X");
    v = block_index(j, z.head(dj));
    u = block_index(1 - j, z.segment(dj, dm));
    const Index n2 = s_.m2_support.rows();
    c = j == 0 ? v * n2 + u : u * n2 + v;
  }

  DiscreteMultiDgpSpec s_;
  detail::SupportIndex xi_, m1i_, m2i_;
  DiscreteMultiTruth truth_;
};

// Two binary covariates and two dependent binary mediators. With
// null_m1 the law of M1 given X does not depend on A, so the effect through
// M1 vanishes while M2 still reacts to treatment.
inline DiscreteMultiDgpSpec discrete_multi_default(bool null_m1 = false) {
  DiscreteMultiDgpSpec s;
  s.x_support.resize(4, 2);
  s.x_support << 0, 0, 0, 1, 1, 0, 1, 1;
  s.p_x.resize(4);
  s.p_x << 0.3, 0.2, 0.25, 0.25;
  s.p_treat.resize(4);
  s.p_treat << 0.4, 0.55, 0.6, 0.7;
  s.m1_support.resize(2, 1);
  s.m1_support << 0, 1;
  s.m2_support.resize(2, 1);
  s.m2_support << 0, 1;
  const double a1 = null_m1 ? 0.0 : 1.0;
  for (int a = 0; a < 2; ++a) {
    auto& P = s.p_m[static_cast<std::size_t>(a)];
    auto& Mu = s.mu[static_cast<std::size_t>(a)];
    P.resize(4, 4);
    Mu.resize(4, 4);
    for (Index x = 0; x < 4; ++x) {
      const double x1 = s.x_support(x, 0), x2 = s.x_support(x, 1);
      const double p1 = expit(-0.4 + a1 * a + 0.5 * x1 - 0.3 * x2);
      for (Index v = 0; v < 2; ++v)
        for (Index u = 0; u < 2; ++u) {
          const double m1 = static_cast<double>(v), m2 = static_cast<double>(u);
          const double p2 = expit(-0.2 + 0.8 * a + 0.7 * m1 + 0.3 * x1 - 0.4 * x2);
          P(x, v * 2 + u) = (v ? p1 : 1 - p1) * (u ? p2 : 1 - p2);
          Mu(x, v * 2 + u) = 1.0 + 0.5 * x1 - 0.4 * x2 + 0.8 * m1 + 0.6 * m2 +
                             a * (1.0 + 0.7 * m1 + 0.5 * m2 + 0.8 * m1 * m2 - 0.3 * x1 * m2);
        }
    }
  }
  return s;
}

// Continuous two-mediator design on the covariates of PaperDgp:
//   M1 = g(X) + 0.8 A + e1,  M2 = 0.5 M1 + h(X) + 0.5 A + e2,
//   g = 1 + 0.8 X1 - 0.5 X3, h = 0.5 - 0.4 X2 + 0.6 X3,
// and a treated outcome mean 3 + X1 - 0.5 X2 + X3 + b1 M1 + b2 M2 + b12 M1 M2.
// The effects are closed-form Gaussian moments.
class GaussianMultiDgp {
 public:
  double b1 = 1.0;
  double b2 = 0.8;
  double b12 = 0.3;

  [[nodiscard]] MultiDataset sample(Index n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MultiDataset d;
    d.X.resize(n, 3);
    d.A.resize(n);
    d.M.resize(n, 2);
    d.Y.resize(n);
    d.blocks = {{0}, {1}};
    for (Index i = 0; i < n; ++i) {
      const double x1 = z(rng), x2 = z(rng), x3 = u(rng) < 0.5 ? 1.0 : 0.0;
      const double a = u(rng) < expit(PaperDgp::logit_treat(x1, x2, x3)) ? 1.0 : 0.0;
      const double m1 = 1.0 + 0.8 * x1 - 0.5 * x3 + 0.8 * a + z(rng);
      const double m2 = 0.5 * m1 + 0.5 - 0.4 * x2 + 0.6 * x3 + 0.5 * a + z(rng);
      const double base = 2.0 + x1 - 0.5 * x2 + x3;
      const double treated = 1.0 + b1 * m1 + b2 * m2 + b12 * m1 * m2;
      const double control = 0.5 * m1 + 0.3 * m2;
      d.X.row(i) << x1, x2, x3;
      d.A(i) = a;
      d.M.row(i) << m1, m2;
      d.Y(i) = base + (a == 1.0 ? treated : control) + z(rng);
    }
    return d;
  }

  // Shifts of E[M1 | A, X] and E[M2 | A, X] are 0.8 and 0.9; E_X of the
  // treated means of M1 and M2 are 1.55 and 2.075.
  [[nodiscard]] double eie(int j) const {
    if (j == 0) return 0.8 * (b1 + 2.075 * b12);
    if (j == 1) return 0.9 * (b2 + 1.55 * b12);
    fail_validation("GaussianMultiDgp", "mediator index must be 0 or 1");
  }
  [[nodiscard]] double total_indirect() const { return 0.8 * b1 + 0.9 * b2 + 2.335 * b12; }
  [[nodiscard]] double treated_mean() const { return 3.5 + 1.55 * b1 + 2.075 * b2 + 3.9925 * b12; }
};

// ---------------------------------------------------------------------------
// Replications

using SingleEstimatorSuite = std::function<std::vector<EstimateReport>(const Dataset&, std::uint64_t)>;

// Two-stage, naive and (optionally) density-based estimators from one
// cross-fit per dataset; mu1 and mu2 are shared across them.
inline SingleEstimatorSuite paper_estimator_suite(const BalancingConfig& cfg, const RegressorSpec& reg, bool with_tts,
                                                  int folds = 4, double ci_level = 0.95) {
  return [=](const Dataset& d, std::uint64_t seed) {
    SingleCrossFitOptions opt;
    opt.folds = folds;
    opt.seed = seed;
    opt.tts = with_tts;
    const SingleCrossFit cf = cross_fit_single(d, cfg, reg, opt);
    std::vector<EstimateReport> out;
    out.push_back(report_from_scores("two-stage", "psi", cf.phi, cf.folds, ci_level, true));
    out.back().diagnostics = cf.diagnostics;
    out.push_back(report_from_scores("naive", "psi", cf.mu2, cf.folds, ci_level, false));
    if (with_tts) out.push_back(report_from_scores("tts", "psi", cf.tts, cf.folds, ci_level, false));
    return out;
  };
}

struct ReplicationResult {
  ReplicationTable table;
  std::map<std::string, std::vector<EstimateReport>> reports;  // per estimator, per replication
};

// Replication r uses data seed mix(seed, r) and estimator seed
// mix(seed ^ c, r); results never depend on thread scheduling.
inline ReplicationResult run_replications(const SingleDgp& dgp, Index n, int reps, std::uint64_t seed,
                                          const SingleEstimatorSuite& suite, double truth, unsigned threads = 0) {
  if (reps < 1) fail_validation("run_replications", "reps must be positive");
  std::vector<std::vector<EstimateReport>> per(static_cast<std::size_t>(reps));
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        const Dataset d = dgp.sample(n, mix_seed(seed, r));
        per[r] = suite(d, mix_seed(seed ^ 0x5bd1e995ull, r));
        for (auto& rep : per[r]) rep.scores.resize(0);
      },
      threads);
  ReplicationResult res;
  std::vector<std::string> order;
  for (const auto& rep : per.front()) order.push_back(rep.estimator);
  for (const auto& name : order) {
    std::vector<double> est;
    std::vector<std::pair<double, double>> ci;
    bool calibrated = true;
    for (const auto& rr : per)
      for (const auto& rep : rr)
        if (rep.estimator == name) {
          est.push_back(rep.estimate);
          ci.emplace_back(rep.ci_lower, rep.ci_upper);
          calibrated = calibrated && rep.calibrated;
          res.reports[name].push_back(rep);
        }
    res.table.rows.push_back(summarize_replications(name, n, est, truth, calibrated ? &ci : nullptr));
  }
  return res;
}

}  // namespace medbalance

#endif  // MEDBALANCE_SIMLAB_HPP
