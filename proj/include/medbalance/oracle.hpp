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

#ifndef MEDBALANCE_ORACLE_HPP
#define MEDBALANCE_ORACLE_HPP

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <cmath>

#include "medbalance/balance.hpp"
#include "medbalance/error.hpp"
#include "medbalance/kernel.hpp"

namespace medbalance {

// Reference solver for the balancing minimax problems. It never forms the
// closed-form Gamma: the critic is maximised by a direct least-squares solve
// of its own first-order condition, the outer gradient follows from
// Danskin's theorem, and the outer problem is solved by Newton steps with a
// truncated-SVD pseudo-inverse of a Hessian assembled from gradient
// differences.
struct OracleResult {
  Vector coefficients;
  double gradient_norm = 0.0;
  double objective = 0.0;
  int newton_steps = 0;
};

class SaddleObjective {
 public:
  // inner(alpha_h; alpha) = alpha_h^T (K_h (a o K_w alpha) - offset) / n
  //                         - alpha_h^T (1/4 K_h Dc K_h + lambda_h K_h) alpha_h
  // outer(alpha)          = max inner + lambda_w alpha^T K_w alpha
  SaddleObjective(Matrix Kw, Matrix Kh, Vector counts, Vector a, Vector offset, double n, double lambda_w,
                  double lambda_h)
      : Kw_(std::move(Kw)), Kh_(std::move(Kh)), a_(std::move(a)), offset_(std::move(offset)), n_(n),
        lw_(lambda_w) {
    Q_ = 0.25 * Kh_ * (counts / n).asDiagonal() * Kh_ + lambda_h * Kh_;
    Q_ = 0.5 * (Q_ + Q_.transpose()).eval();
    cod_.compute(Q_);
  }

  [[nodiscard]] Vector critic_argmax(const Vector& alpha) const {
    Vector u = (Kh_ * a_.cwiseProduct(Kw_ * alpha) - offset_) / n_;
    return cod_.solve(0.5 * u);
  }

  [[nodiscard]] double value(const Vector& alpha) const {
    Vector ah = critic_argmax(alpha);
    Vector u = (Kh_ * a_.cwiseProduct(Kw_ * alpha) - offset_) / n_;
    return ah.dot(u) - ah.dot(Q_ * ah) + lw_ * alpha.dot(Kw_ * alpha);
  }

  [[nodiscard]] Vector gradient(const Vector& alpha) const {
    Vector ah = critic_argmax(alpha);
    return Kw_ * a_.cwiseProduct(Kh_ * ah) / n_ + 2.0 * lw_ * (Kw_ * alpha);
  }

  [[nodiscard]] Index dim() const { return Kw_.rows(); }

 private:
  Matrix Kw_, Kh_, Q_;
  Vector a_, offset_;
  double n_;
  double lw_;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod_;
};

inline OracleResult minimize_saddle_numerically(const SaddleObjective& obj, double tol = 1e-10,
                                                int max_steps = 30) {
  const Index m = obj.dim();
  const Vector g0 = obj.gradient(Vector::Zero(m));
  Matrix H(m, m);
  for (Index i = 0; i < m; ++i) H.col(i) = obj.gradient(Vector::Unit(m, i)) - g0;
  H = 0.5 * (H + H.transpose()).eval();
  Eigen::JacobiSVD<Matrix> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  svd.setThreshold(1e-13);
  OracleResult res;
  res.coefficients = Vector::Zero(m);
  Vector g = g0;
  const double scale = std::max(1.0, g0.norm());
  for (int step = 0; step < max_steps && g.norm() > tol * scale; ++step) {
    res.coefficients -= svd.solve(g);
    g = obj.gradient(res.coefficients);
    res.newton_steps = step + 1;
  }
  res.gradient_norm = g.norm();
  res.objective = obj.value(res.coefficients);
  return res;
}

enum class MinimaxFamily { pi1, pi2 };

// Unit-level oracle for pi1 (points = X) or pi2 (points = (M, X)) with the
// kernels and regularization held fixed at those in cfg.
inline OracleResult numeric_minimax_oracle(MinimaxFamily family, const Matrix& points, const Vector& A,
                                           const Vector& pi1_values, const BalancingConfig& cfg) {
  cfg.validate();
  if (points.rows() != A.size()) fail_validation("numeric_minimax_oracle", "points and A differ in length");
  const Index n = points.rows();
  const KernelSpec kw = cfg.pi_kernel ? *cfg.pi_kernel : default_gaussian_kernel(points);
  const KernelSpec kh = cfg.h_kernel ? *cfg.h_kernel : kw;
  Vector a, b;
  if (family == MinimaxFamily::pi1) {
    a = Vector::Ones(n) - A;
    b = Vector::Ones(n);
  } else {
    if (pi1_values.size() != n) fail_validation("numeric_minimax_oracle", "pi1 values have wrong length");
    a = A;
    b = (Vector::Ones(n) - A).cwiseProduct(pi1_values);
  }
  Matrix Kw = gram(kw, points);
  Matrix Kh = gram(kh, points);
  Vector offset = Kh * b;
  SaddleObjective obj(Kw, Kh, Vector::Ones(n), a, offset, static_cast<double>(n), cfg.lambda_pi, cfg.lambda_h);
  OracleResult r = minimize_saddle_numerically(obj);
  if (r.gradient_norm > 1e-8 * std::max(1.0, obj.gradient(Vector::Zero(n)).norm()))
    fail_numerical("numeric_minimax_oracle", "did not converge", {{"gradient_norm", to_text(r.gradient_norm)}});
  return r;
}

}  // namespace medbalance

#endif  // MEDBALANCE_ORACLE_HPP
