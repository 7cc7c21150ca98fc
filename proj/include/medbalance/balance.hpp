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

#ifndef MEDBALANCE_BALANCE_HPP
#define MEDBALANCE_BALANCE_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "medbalance/error.hpp"
#include "medbalance/kernel.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

// How the outer normal equations are solved.
//   pseudo_inverse  alpha = H^+ rhs with H = K D Gamma D K + n^2 lambda K
//   factored        H = K (D Gamma D K + n^2 lambda I); solve the second
//                   factor by LU. Gives a solution of the same normal
//                   equations, hence the same fitted function, in O(n^3 / 3).
//   automatic       pseudo_inverse up to pinv_max_atoms atoms, else factored
enum class NormalSolver { automatic, pseudo_inverse, factored };

struct BalancingConfig {
  std::optional<KernelSpec> pi_kernel;
  std::optional<KernelSpec> h_kernel;  // defaults to pi_kernel
  double lambda_pi = 1e-3;
  double lambda_h = 1e-3;
  double trim_epsilon = 0.01;
  // Grid search: lambda_pi = lambda_h = g for g in lambda_grid, scored by
  // the balancing residual on a held-out quarter.
  bool tune = true;
  std::vector<double> lambda_grid{1e-4, 1e-3, 1e-2, 1e-1};
  double validation_fraction = 0.25;
  NormalSolver solver = NormalSolver::automatic;
  Index pinv_max_atoms = 600;
  // Multiplies the bandwidth of the data-driven default kernel.
  double bandwidth_scale = 1.0;
  double pinv_rel_tol = 1e-10;
  std::uint64_t seed = 11;

  void validate() const {
    if (pi_kernel) pi_kernel->validate();
    if (h_kernel) h_kernel->validate();
    if (!(lambda_pi > 0.0) || !(lambda_h > 0.0))
      fail_validation("BalancingConfig", "regularization weights must be positive",
                      {{"lambda_pi", to_text(lambda_pi)}, {"lambda_h", to_text(lambda_h)}});
    if (!(trim_epsilon > 0.0 && trim_epsilon < 0.5))
      fail_validation("BalancingConfig", "trim_epsilon must lie in (0, 0.5)",
                      {{"trim_epsilon", to_text(trim_epsilon)}});
    for (double g : lambda_grid)
      if (!(g > 0.0)) fail_validation("BalancingConfig", "lambda grid entries must be positive");
    if (!(bandwidth_scale > 0.0)) fail_validation("BalancingConfig", "bandwidth_scale must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      fail_validation("BalancingConfig", "validation_fraction must lie in (0, 1)");
  }
};

struct ClipBounds {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

struct BalanceFit {
  KernelSpec kernel;
  Matrix anchors;
  Vector coefficients;
  ClipBounds clip;
  double lambda_pi = 0.0;
  double lambda_h = 0.0;
  bool tuned = false;
  Index n_train = 0;
  Index clipped_train = 0;
  double train_residual = 0.0;

  [[nodiscard]] Vector evaluate_raw(const Matrix& points) const {
    return gram(kernel, points, anchors) * coefficients;
  }

  [[nodiscard]] Vector evaluate(const Matrix& points, Index* clipped = nullptr) const {
    Vector v = evaluate_raw(points);
    Index c = 0;
    for (Index i = 0; i < v.size(); ++i) {
      if (v(i) < clip.lower) {
        v(i) = clip.lower;
        ++c;
      } else if (v(i) > clip.upper) {
        v(i) = clip.upper;
        ++c;
      }
    }
    if (clipped) *clipped = c;
    return v;
  }
};

namespace detail {

// Inner maximisation over the critic ball, in closed form. With
// Dc = diag(counts) / n and Kt = Dc^1/2 K_H Dc^1/2,
//   Gamma = 1/4 K_H (1/4 Dc K_H + lambda I)^-1 = Dc^-1/2 [1/4 Kt (1/4 Kt + lambda I)^-1] Dc^-1/2
//   M^T   = (1/4 K_H Dc + lambda I)^-1          = Dc^-1/2 (1/4 Kt + lambda I)^-1 Dc^1/2
// For unit counts these reduce to 1/4 K (K / 4n + lambda I)^-1 and
// (K / 4n + lambda I)^-1.
class CriticOperator {
 public:
  CriticOperator(const Matrix& Kh, const Vector& counts, double n, double lambda_h) {
    sq_ = (counts / n).cwiseSqrt();
    Matrix Kt = sq_.asDiagonal() * Kh * sq_.asDiagonal();
    Matrix B = 0.25 * Kt;
    B.diagonal().array() += lambda_h;
    llt_.compute(B);
    if (llt_.info() != Eigen::Success) fail_numerical("CriticOperator", "critic system is not positive definite");
    Matrix G = 0.25 * llt_.solve(Kt);
    G = 0.5 * (G + G.transpose()).eval();
    Vector isq = sq_.cwiseInverse();
    gamma_ = isq.asDiagonal() * G * isq.asDiagonal();
  }

  [[nodiscard]] const Matrix& gamma() const { return gamma_; }

  [[nodiscard]] Vector mt_times(const Vector& v) const {
    return sq_.cwiseInverse().cwiseProduct(llt_.solve(sq_.cwiseProduct(v)));
  }

 private:
  Vector sq_;
  Eigen::LLT<Matrix> llt_;
  Matrix gamma_;
};

// Minimiser of the profiled objective
//   1/4 [xi^T K_H M xi - 2 t^T M xi] + lambda_w alpha^T K_w alpha,  xi = a o (K_w alpha) / n,
// i.e. a solution of
//   (K_w D Gamma D K_w + n^2 lambda_w K_w) alpha = K_w D (1/4 M^T t).
// For weights balancing a target b, t = K_H b and 1/4 M^T t = Gamma b.
inline Vector solve_profiled(const Matrix& Kw, const CriticOperator& critic, const Vector& a,
                             const Vector& offset, double n, double lambda_w, NormalSolver solver,
                             Index pinv_max_atoms, double rel_tol) {
  const Index m = Kw.rows();
  Vector r = 0.25 * critic.mt_times(offset);
  Vector Dr = a.cwiseProduct(r);
  const bool use_pinv = solver == NormalSolver::pseudo_inverse ||
                        (solver == NormalSolver::automatic && m <= pinv_max_atoms);
  Vector alpha;
  if (use_pinv) {
    Matrix DK = a.asDiagonal() * Kw;
    Matrix H = DK.transpose() * critic.gamma() * DK;
    H += n * n * lambda_w * Kw;
    H = 0.5 * (H + H.transpose()).eval();
    alpha = pseudo_inverse_solve_symmetric(H, Kw * Dr, rel_tol);
  } else {
    Matrix S = a.asDiagonal() * (critic.gamma() * (a.asDiagonal() * Kw));
    S.diagonal().array() += n * n * lambda_w;
    Eigen::PartialPivLU<Matrix> lu(S);
    alpha = lu.solve(Dr);
  }
  if (!alpha.allFinite()) fail_numerical("solve_profiled", "balancing solve produced non-finite coefficients");
  return alpha;
}

inline Index clip_count(const Vector& v, const ClipBounds& c) {
  Index k = 0;
  for (Index i = 0; i < v.size(); ++i) k += (v(i) < c.lower || v(i) > c.upper) ? 1 : 0;
  return k;
}

inline Vector clipped(Vector v, const ClipBounds& c) {
  for (Index i = 0; i < v.size(); ++i) v(i) = std::clamp(v(i), c.lower, c.upper);
  return v;
}

inline void check_binary(const Vector& A, const char* where) {
  for (Index i = 0; i < A.size(); ++i)
    if (A(i) != 0.0 && A(i) != 1.0)
      fail_validation(where, "treatment must be coded 0/1", {{"row", to_text(i)}, {"value", to_text(A(i))}});
}

inline void split_indices(Index n, double fraction, std::uint64_t seed, std::vector<Index>& train,
                          std::vector<Index>& val) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto nv = static_cast<std::ptrdiff_t>(std::max<double>(1.0, std::floor(fraction * static_cast<double>(n))));
  val.assign(perm.begin(), perm.begin() + nv);
  train.assign(perm.begin() + nv, perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
}

}  // namespace detail

// sup over the critic unit ball of E_n[(w - target) h] for h in the RKHS,
// i.e. (1/n) sqrt(r^T K r) with r = weights - target.
inline double balancing_residual(const Vector& weights, const KernelSpec& critic_kernel, const Matrix& points,
                                 const Vector& target) {
  if (weights.size() != points.rows() || target.size() != points.rows())
    fail_validation("balancing_residual", "lengths of weights, target and points differ");
  if (points.rows() == 0) fail_validation("balancing_residual", "empty sample");
  Atoms atoms = Atoms::from_rows(points);
  Vector r = atoms.sum(weights - target);
  Matrix K = gram(critic_kernel, atoms.points);
  const double q = r.dot(K * r);
  return std::sqrt(std::max(0.0, q)) / static_cast<double>(points.rows());
}

namespace detail {

inline BalanceFit fit_balancing_fixed(const Matrix& points, const Vector& a, const Vector& b,
                                      const KernelSpec& kw, const KernelSpec& kh, bool shared_kernel,
                                      double lambda_w, double lambda_h, const BalancingConfig& cfg,
                                      ClipBounds clip) {
  Atoms atoms = Atoms::from_rows(points);
  const double n = static_cast<double>(points.rows());
  Vector as = atoms.sum(a), bs = atoms.sum(b);
  Matrix Kw = gram(kw, atoms.points);
  Matrix Kh = shared_kernel ? Kw : gram(kh, atoms.points);
  CriticOperator critic(Kh, atoms.counts, n, lambda_h);
  Vector alpha = solve_profiled(Kw, critic, as, Kh * bs, n, lambda_w, cfg.solver, cfg.pinv_max_atoms,
                                cfg.pinv_rel_tol);
  BalanceFit fit;
  fit.kernel = kw;
  fit.anchors = std::move(atoms.points);
  fit.coefficients = std::move(alpha);
  fit.clip = clip;
  fit.lambda_pi = lambda_w;
  fit.lambda_h = lambda_h;
  fit.n_train = points.rows();
  return fit;
}

}  // namespace detail

// Generic minimax balancing fit for weights w with
//   E_n[(a w(z) - b) h(z)] ~ 0 for all critics h,
// followed by clipping to [clip.lower, clip.upper] at evaluation time.
inline BalanceFit fit_balancing_weights(const Matrix& points, const Vector& a, const Vector& b,
                                        const BalancingConfig& cfg, ClipBounds clip, const std::string& where) {
  cfg.validate();
  if (points.rows() != a.size() || points.rows() != b.size())
    fail_validation(where, "points and weights differ in length");
  if (points.rows() < 2) fail_validation(where, "need at least two units");
  if (!points.allFinite() || !a.allFinite() || !b.allFinite())
    fail_validation(where, "non-finite input");
  KernelSpec kw = cfg.pi_kernel ? *cfg.pi_kernel : default_gaussian_kernel(points);
  if (!cfg.pi_kernel) kw.bandwidth *= cfg.bandwidth_scale;
  const bool shared = !cfg.h_kernel.has_value();
  const KernelSpec kh = shared ? kw : *cfg.h_kernel;
  kw.check_dim(points.cols());
  kh.check_dim(points.cols());

  double lw = cfg.lambda_pi, lh = cfg.lambda_h;
  bool tuned = false;
  if (cfg.tune && !cfg.lambda_grid.empty() && points.rows() >= 20) {
    std::vector<Index> tr, va;
    detail::split_indices(points.rows(), cfg.validation_fraction, cfg.seed, tr, va);
    Matrix pt = select_rows(points, tr), pv = select_rows(points, va);
    Vector at = select_rows(a, tr), av = select_rows(a, va);
    Vector bt = select_rows(b, tr), bv = select_rows(b, va);
    std::vector<double> grid = cfg.lambda_grid;
    std::sort(grid.begin(), grid.end());
    double best = std::numeric_limits<double>::infinity();
    for (double g : grid) {
      double res;
      try {
        BalanceFit f = detail::fit_balancing_fixed(pt, at, bt, kw, kh, shared, g, g, cfg, clip);
        res = balancing_residual(av.cwiseProduct(f.evaluate(pv)), kh, pv, bv);
      } catch (const Error&) {
        continue;
      }
      if (res < best) {
        best = res;
        lw = lh = g;
        tuned = true;
      }
    }
  }
  BalanceFit fit = detail::fit_balancing_fixed(points, a, b, kw, kh, shared, lw, lh, cfg, clip);
  fit.tuned = tuned;
  Vector w = fit.evaluate(points, &fit.clipped_train);
  fit.train_residual = balancing_residual(a.cwiseProduct(w), kh, points, b);
  return fit;
}

// pi1 = 1 / p(A = 0 | X), balanced over the controls.
inline BalanceFit fit_pi1(const Matrix& X, const Vector& A, const BalancingConfig& cfg) {
  detail::check_binary(A, "fit_pi1");
  if (X.rows() != A.size()) fail_validation("fit_pi1", "X and A differ in length");
  if (A.sum() >= static_cast<double>(A.size())) fail_validation("fit_pi1", "no control units; pi1 is undefined");
  Vector a = Vector::Ones(A.size()) - A;
  Vector b = Vector::Ones(A.size());
  return fit_balancing_weights(X, a, b, cfg, {1.0, 1.0 / cfg.trim_epsilon}, "fit_pi1");
}

// pi2 = p(M | A = 0, X) / (p(M | A = 1, X) p(A = 1 | X)), balancing treated
// units against the pi1-weighted controls on (M, X).
inline BalanceFit fit_pi2(const Matrix& MX, const Vector& A, const Vector& pi1_values, const BalancingConfig& cfg) {
  detail::check_binary(A, "fit_pi2");
  if (MX.rows() != A.size() || pi1_values.size() != A.size())
    fail_validation("fit_pi2", "inputs differ in length");
  if (A.sum() <= 0.0) fail_validation("fit_pi2", "no treated units; pi2 is undefined");
  if (!pi1_values.allFinite()) fail_validation("fit_pi2", "pi1 values must be finite");
  Vector b = (Vector::Ones(A.size()) - A).cwiseProduct(pi1_values);
  const double e = cfg.trim_epsilon;
  return fit_balancing_weights(MX, A, b, cfg, {0.0, 1.0 / (e * e)}, "fit_pi2");
}

}  // namespace medbalance

#endif  // MEDBALANCE_BALANCE_HPP
