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
#ifndef MEDBALANCE_BALANCE_MULTI_HPP
#define MEDBALANCE_BALANCE_MULTI_HPP

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "medbalance/balance.hpp"
#include "medbalance/error.hpp"
#include "medbalance/kernel.hpp"
#include "medbalance/oracle.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

// Balancing problems for the mediator-specific effect. Each block has its own
// weight and critic kernels; unset kernels fall back to the standardized
// Gaussian default on the block's inputs.
struct MultiBalancingConfig {
  BalancingConfig pi;     // inputs X
  BalancingConfig rho;    // inputs (M_j, X)
  BalancingConfig omega;  // inputs (M_j, M_-j, X)
  std::optional<KernelSpec> cme_kernel;  // on X
  double lambda_cme = 1.0;
  double trim_epsilon = 0.01;
  double delta_pi = 0.02;
  Index max_units = 5000;

  void validate() const {
    pi.validate();
    rho.validate();
    omega.validate();
    if (cme_kernel) cme_kernel->validate();
    if (!(lambda_cme > 0.0)) fail_validation("MultiBalancingConfig", "lambda_cme must be positive");
    if (!(trim_epsilon > 0.0 && trim_epsilon < 0.5))
      fail_validation("MultiBalancingConfig", "trim_epsilon must lie in (0, 0.5)");
    if (!(delta_pi > 0.0 && 1.0 + delta_pi < 1.0 / trim_epsilon))
      fail_validation("MultiBalancingConfig", "delta_pi must be positive and below 1/epsilon - 1");
    if (max_units < 2) fail_validation("MultiBalancingConfig", "max_units must be at least 2");
  }
};

namespace detail {

inline void check_units(Index n, const MultiBalancingConfig& cfg, const char* where) {
  if (n > cfg.max_units)
    fail_validation(where, "sample exceeds the configured unit cap",
                    {{"n", to_text(n)}, {"max_units", to_text(cfg.max_units)}});
}

inline std::vector<Index> index_range(Index from, Index count) {
  std::vector<Index> v(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = from + i;
  return v;
}

}  // namespace detail

// Inverse propensity weights 1/P(A=1|x), clipped to [1 + delta, 1/epsilon].
inline BalanceFit fit_pi_multi(const Matrix& X, const Vector& A, const MultiBalancingConfig& cfg) {
  cfg.validate();
  detail::check_binary(A, "fit_pi_multi");
  detail::check_units(X.rows(), cfg, "fit_pi_multi");
  if (A.sum() < 1.0) fail_validation("fit_pi_multi", "no treated units");
  return fit_balancing_weights(X, A, Vector::Ones(A.size()), cfg.pi,
                               {1.0 + cfg.delta_pi, 1.0 / cfg.trim_epsilon}, "fit_pi_multi");
}

// Density ratio of M_j given X between control and treated units, balanced
// on (M_j, X) with treated weights A pi and control target (1 - A) pi / (pi - 1).
inline BalanceFit fit_rho(const Matrix& MjX, const Vector& A, const Vector& pi_values,
                          const MultiBalancingConfig& cfg) {
  cfg.validate();
  detail::check_binary(A, "fit_rho");
  detail::check_units(MjX.rows(), cfg, "fit_rho");
  if (pi_values.size() != A.size()) fail_validation("fit_rho", "pi values have wrong length");
  if ((pi_values.array() <= 1.0).any()) fail_validation("fit_rho", "pi values must exceed 1");
  Vector a = A.cwiseProduct(pi_values);
  Vector b = (Vector::Ones(A.size()) - A).cwiseProduct(pi_values.cwiseQuotient(pi_values.array().matrix() -
                                                                                Vector::Ones(A.size())));
  return fit_balancing_weights(MjX, a, b, cfg.rho, {cfg.trim_epsilon, 1.0 / cfg.trim_epsilon}, "fit_rho");
}

// Kernel ridge embedding of the treated law of M_j given X. For a query x the
// weight of treated unit r is (W k_X(x))_r with W = (K_X + lambda I)^-1, and
// units sharing a covariate row share their weight.
struct CmeFit {
  KernelSpec kernel;
  double lambda = 1.0;
  Matrix x_atoms;
  Vector x_counts;
  // Treated (M_j, X) groups with multiplicities and covariate atom.
  Matrix group_mj;
  Matrix group_x;
  Vector group_counts;
  std::vector<Index> group_atom;
  Eigen::LLT<Matrix> llt;

  // B(u, q) = beta_u(x_q), the weight of any unit in covariate atom u.
  [[nodiscard]] Matrix atom_weights(const Matrix& queries) const {
    Vector sq = x_counts.cwiseSqrt();
    Matrix rhs = sq.asDiagonal() * gram(kernel, x_atoms, queries);
    Matrix g = llt.solve(rhs);
    return sq.cwiseInverse().asDiagonal() * g;
  }

  // Bt(t, q) = count_t beta_{u(t)}(x_q) over the treated groups.
  [[nodiscard]] Matrix group_weights(const Matrix& queries) const {
    Matrix B = atom_weights(queries);
    Matrix Bt(group_counts.size(), queries.rows());
    for (Index t = 0; t < Bt.rows(); ++t)
      Bt.row(t) = group_counts(t) * B.row(group_atom[static_cast<std::size_t>(t)]);
    return Bt;
  }
};

inline CmeFit fit_cme(const Matrix& Mj_treated, const Matrix& X_treated, const std::optional<KernelSpec>& kernel,
                      double lambda) {
  if (Mj_treated.rows() != X_treated.rows()) fail_validation("fit_cme", "mediator and covariate rows differ");
  if (X_treated.rows() < 1) fail_validation("fit_cme", "no treated units");
  if (!(lambda > 0.0)) fail_validation("fit_cme", "lambda must be positive");
  CmeFit f;
  f.kernel = kernel ? *kernel : default_gaussian_kernel(X_treated);
  f.kernel.check_dim(X_treated.cols());
  f.lambda = lambda;
  Atoms xa = Atoms::from_rows(X_treated);
  f.x_atoms = xa.points;
  f.x_counts = xa.counts;
  Atoms ga = Atoms::from_rows(hcat(Mj_treated, X_treated));
  const Index dj = Mj_treated.cols();
  f.group_mj = ga.points.leftCols(dj);
  f.group_x = ga.points.rightCols(X_treated.cols());
  f.group_counts = ga.counts;
  f.group_atom.assign(static_cast<std::size_t>(ga.points.rows()), 0);
  for (Index i = 0; i < X_treated.rows(); ++i)
    f.group_atom[static_cast<std::size_t>(ga.atom_of[static_cast<std::size_t>(i)])] =
        xa.atom_of[static_cast<std::size_t>(i)];
  Vector sq = xa.counts.cwiseSqrt();
  Matrix S = sq.asDiagonal() * gram(f.kernel, xa.points) * sq.asDiagonal();
  S.diagonal().array() += lambda;
  f.llt.compute(S);
  if (f.llt.info() != Eigen::Success) fail_numerical("fit_cme", "embedding system is not positive definite");
  return f;
}

namespace detail {

// Pieces of the omega problem on the atoms z_s of (M_j, M_-j, X):
//   C(s, k) = sum_t count_t K_G((mj_t, m-j_k, x_t), z_s) beta_{u(t)}(x_k)
//   Q(k, k') = sum_{t,t'} Bt(t,k) Bt(t',k') K_G((mj_t, m-j_k, x_t), (mj_t', m-j_k', x_t'))
// For Gaussian critics the kernel splits over the M_-j and (M_j, X) blocks,
// so C = E2 o (E1 Bt) and Q = E2 o (Bt^T F Bt).
struct OmegaSystem {
  Atoms atoms;
  Vector a_sum;
  Matrix C;
  Matrix Q;
};

inline OmegaSystem omega_system(const CmeFit& cme, const Matrix& Z, const Vector& a, Index dj, Index dm,
                                const KernelSpec& kg, bool with_q) {
  OmegaSystem sys;
  sys.atoms = Atoms::from_rows(Z);
  sys.a_sum = sys.atoms.sum(a);
  const Matrix& P = sys.atoms.points;
  const Index S = P.rows(), dx = Z.cols() - dj - dm;
  Matrix Bt = cme.group_weights(P.rightCols(dx));
  const Index T = Bt.rows();
  if (kg.family == KernelFamily::gaussian_rbf) {
    std::vector<Index> jx = index_range(0, dj), mm = index_range(dj, dm);
    for (Index c = 0; c < dx; ++c) jx.push_back(dj + dm + c);
    KernelSpec k_jx = kg.restricted(jx), k_m = kg.restricted(mm);
    Matrix PJX(S, dj + dx);
    PJX << P.leftCols(dj), P.rightCols(dx);
    Matrix GJX = hcat(cme.group_mj, cme.group_x);
    Matrix E2 = gram(k_m, P.middleCols(dj, dm));
    Matrix E1 = gram(k_jx, PJX, GJX);
    sys.C = E2.cwiseProduct(E1 * Bt);
    if (with_q) {
      Matrix F = gram(k_jx, GJX);
      sys.Q = E2.cwiseProduct(Bt.transpose() * F * Bt);
    }
    return sys;
  }
  // General kernels: explicit sums over the treated groups.
  sys.C = Matrix::Zero(S, S);
  RowVector q(Z.cols());
  std::vector<Matrix> shifted(static_cast<std::size_t>(S));
  for (Index k = 0; k < S; ++k) {
    Matrix W(T, Z.cols());
    for (Index t = 0; t < T; ++t) {
      q << cme.group_mj.row(t), P.row(k).segment(dj, dm), cme.group_x.row(t);
      W.row(t) = q;
    }
    Matrix G = gram(kg, P, W);
    sys.C.col(k) = G * Bt.col(k);
    shifted[static_cast<std::size_t>(k)] = std::move(W);
  }
  if (with_q) {
    sys.Q = Matrix::Zero(S, S);
    for (Index k = 0; k < S; ++k)
      for (Index l = k; l < S; ++l) {
        Matrix G = gram(kg, shifted[static_cast<std::size_t>(k)], shifted[static_cast<std::size_t>(l)]);
        sys.Q(k, l) = sys.Q(l, k) = Bt.col(k).dot(G * Bt.col(l));
      }
  }
  return sys;
}

inline double omega_residual_from(const OmegaSystem& sys, const Vector& omega_atoms, const KernelSpec& kg,
                                  double n) {
  Vector aw = sys.a_sum.cwiseProduct(omega_atoms);
  Matrix K = gram(kg, sys.atoms.points);
  const double q = aw.dot(K * aw) - 2.0 * aw.dot(sys.C * sys.a_sum) + sys.a_sum.dot(sys.Q * sys.a_sum);
  return std::sqrt(std::max(0.0, q)) / n;
}

inline Matrix stack_z(const Matrix& Mj, const Matrix& Mm, const Matrix& X) { return hcat(hcat(Mj, Mm), X); }

inline void check_omega_inputs(const Matrix& Mj, const Matrix& Mm, const Matrix& X, const Vector& A,
                               const Vector& pi_values, const char* where) {
  const Index n = X.rows();
  if (Mj.rows() != n || Mm.rows() != n || A.size() != n || pi_values.size() != n)
    fail_validation(where, "inputs differ in length");
  if (Mj.cols() < 1 || Mm.cols() < 1) fail_validation(where, "both mediator blocks must be non-empty");
  check_binary(A, where);
  if (A.sum() < 1.0) fail_validation(where, "no treated units");
}

inline std::vector<Index> treated_rows(const Vector& A) {
  std::vector<Index> r;
  for (Index i = 0; i < A.size(); ++i)
    if (A(i) == 1.0) r.push_back(i);
  return r;
}

inline BalanceFit fit_omega_fixed(const Matrix& Z, const Vector& a, Index dj, Index dm, const CmeFit& cme,
                                  const KernelSpec& kw, const KernelSpec& kg, double lw, double lh,
                                  const BalancingConfig& cfg, ClipBounds clip) {
  OmegaSystem sys = omega_system(cme, Z, a, dj, dm, kg, false);
  const double n = static_cast<double>(Z.rows());
  Matrix Kw = gram(kw, sys.atoms.points);
  Matrix Kg = gram(kg, sys.atoms.points);
  CriticOperator critic(Kg, sys.atoms.counts, n, lh);
  Vector alpha = solve_profiled(Kw, critic, sys.a_sum, sys.C * sys.a_sum, n, lw, cfg.solver, cfg.pinv_max_atoms,
                                cfg.pinv_rel_tol);
  BalanceFit fit;
  fit.kernel = kw;
  fit.anchors = sys.atoms.points;
  fit.coefficients = std::move(alpha);
  fit.clip = clip;
  fit.lambda_pi = lw;
  fit.lambda_h = lh;
  fit.n_train = Z.rows();
  return fit;
}

}  // namespace detail

// Balancing residual of omega: the RKHS norm of
//   (1/n) sum_i a_i [omega(z_i) K(., z_i) - sum_r beta_r(x_i) K(., (Mj_r, Mm_i, X_r))].
inline double omega_balancing_residual(const Vector& omega_values, const Matrix& Mj, const Matrix& Mm,
                                       const Matrix& X, const Vector& a, const CmeFit& cme,
                                       const KernelSpec& critic_kernel) {
  Matrix Z = detail::stack_z(Mj, Mm, X);
  if (omega_values.size() != Z.rows() || a.size() != Z.rows())
    fail_validation("omega_balancing_residual", "inputs differ in length");
  detail::OmegaSystem sys = detail::omega_system(cme, Z, a, Mj.cols(), Mm.cols(), critic_kernel, true);
  Vector w = Vector::Zero(sys.atoms.points.rows());
  for (Index i = 0; i < Z.rows(); ++i) w(sys.atoms.atom_of[static_cast<std::size_t>(i)]) = omega_values(i);
  return detail::omega_residual_from(sys, w, critic_kernel, static_cast<double>(Z.rows()));
}

// Conditional independence weights of (M_j, M_-j) given X among treated units.
// The treated weights A pi balance every critic g against its embedded
// counterpart E[g(M_j, m, X) | A = 1, X] evaluated at m = M_-j. The embedding
// is given; lambda tuning refits it on the tuning split.
inline BalanceFit fit_omega(const Matrix& Mj, const Matrix& Mm, const Matrix& X, const Vector& A,
                            const Vector& pi_values, const CmeFit& cme, const MultiBalancingConfig& cfg) {
  cfg.validate();
  detail::check_omega_inputs(Mj, Mm, X, A, pi_values, "fit_omega");
  detail::check_units(X.rows(), cfg, "fit_omega");
  if (cme.x_atoms.cols() != X.cols()) fail_validation("fit_omega", "embedding fitted on other covariates");
  const BalancingConfig& bc = cfg.omega;
  Matrix Z = detail::stack_z(Mj, Mm, X);
  if (!Z.allFinite() || !pi_values.allFinite()) fail_validation("fit_omega", "non-finite input");
  Vector a = A.cwiseProduct(pi_values);
  KernelSpec kw = bc.pi_kernel ? *bc.pi_kernel : default_gaussian_kernel(Z);
  if (!bc.pi_kernel) kw.bandwidth *= bc.bandwidth_scale;
  const KernelSpec kg = bc.h_kernel ? *bc.h_kernel : kw;
  kw.check_dim(Z.cols());
  kg.check_dim(Z.cols());
  const ClipBounds clip{cfg.trim_epsilon, 1.0 / cfg.trim_epsilon};
  const Index dj = Mj.cols(), dm = Mm.cols();

  double lw = bc.lambda_pi, lh = bc.lambda_h;
  bool tuned = false;
  if (bc.tune && !bc.lambda_grid.empty() && Z.rows() >= 20) {
    std::vector<Index> tr, va;
    detail::split_indices(Z.rows(), bc.validation_fraction, bc.seed, tr, va);
    Vector At = select_rows(A, tr);
    if (At.sum() >= 1.0 && select_rows(A, va).sum() >= 1.0) {
      Matrix Zt = select_rows(Z, tr), Zv = select_rows(Z, va);
      Vector at = select_rows(a, tr), av = select_rows(a, va);
      std::vector<Index> tt;
      for (Index r : tr)
        if (A(r) == 1.0) tt.push_back(r);
      CmeFit sub = fit_cme(select_rows(Mj, tt), select_rows(X, tt), cme.kernel, cme.lambda);
      detail::OmegaSystem vs = detail::omega_system(sub, Zv, av, dj, dm, kg, true);
      std::vector<double> grid = bc.lambda_grid;
      std::sort(grid.begin(), grid.end());
      double best = std::numeric_limits<double>::infinity();
      for (double g : grid) {
        double res;
        try {
          BalanceFit f = detail::fit_omega_fixed(Zt, at, dj, dm, sub, kw, kg, g, g, bc, clip);
          res = detail::omega_residual_from(vs, f.evaluate(vs.atoms.points), kg, static_cast<double>(Zv.rows()));
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
  }
  BalanceFit fit = detail::fit_omega_fixed(Z, a, dj, dm, cme, kw, kg, lw, lh, bc, clip);
  fit.tuned = tuned;
  Vector w = fit.evaluate(Z, &fit.clipped_train);
  fit.train_residual = omega_balancing_residual(w, Mj, Mm, X, a, cme, kg);
  return fit;
}

// Unit-level reference for omega: explicit W = (K_X + lambda I)^-1 over the
// treated units, elementwise C, and a numerical minimisation of the saddle
// objective. Only meant for small samples.
inline OracleResult omega_numeric_oracle(const Matrix& Mj, const Matrix& Mm, const Matrix& X, const Vector& A,
                                         const Vector& pi_values, const KernelSpec& cme_kernel, double lambda_cme,
                                         const KernelSpec& kw, const KernelSpec& kg, double lambda_w,
                                         double lambda_h) {
  detail::check_omega_inputs(Mj, Mm, X, A, pi_values, "omega_numeric_oracle");
  const Index n = X.rows();
  Matrix Z = detail::stack_z(Mj, Mm, X);
  std::vector<Index> tr = detail::treated_rows(A);
  const Index n1 = static_cast<Index>(tr.size());
  Matrix Xt = select_rows(X, tr), Mjt = select_rows(Mj, tr);
  Matrix KX = gram(cme_kernel, Xt);
  KX.diagonal().array() += lambda_cme;
  Matrix W = KX.fullPivLu().inverse();
  Matrix beta = W * gram(cme_kernel, Xt, X);  // n1 x n
  Matrix C = Matrix::Zero(n, n);
  RowVector q(Z.cols());
  for (Index s = 0; s < n; ++s)
    for (Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Index r = 0; r < n1; ++r) {
        q << Mjt.row(r), Mm.row(i), Xt.row(r);
        acc += kg(q, Z.row(s)) * beta(r, i);
      }
      C(s, i) = acc;
    }
  Vector a = A.cwiseProduct(pi_values);
  SaddleObjective obj(gram(kw, Z), gram(kg, Z), Vector::Ones(n), a, C * a, static_cast<double>(n), lambda_w,
                      lambda_h);
  OracleResult r = minimize_saddle_numerically(obj);
  if (r.gradient_norm > 1e-8 * std::max(1.0, obj.gradient(Vector::Zero(n)).norm()))
    fail_numerical("omega_numeric_oracle", "did not converge", {{"gradient_norm", to_text(r.gradient_norm)}});
  return r;
}

}  // namespace medbalance

#endif  // MEDBALANCE_BALANCE_MULTI_HPP
