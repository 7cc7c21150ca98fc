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
#ifndef MEDBALANCE_MULTI_HPP
#define MEDBALANCE_MULTI_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "medbalance/balance.hpp"
#include "medbalance/balance_multi.hpp"
#include "medbalance/dataset.hpp"
#include "medbalance/error.hpp"
#include "medbalance/kernel.hpp"
#include "medbalance/regress.hpp"
#include "medbalance/report.hpp"
#include "medbalance/single.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

// Discrete law of M_j and of M_-j given A = 1 and a covariate row, as two
// weighted atom lists.
struct MediatorLawAt {
  Matrix mj;
  Vector wj;
  Matrix mm;
  Vector wm;
  bool fallback = false;
};

class TreatedMediatorLaw {
 public:
  virtual ~TreatedMediatorLaw() = default;
  [[nodiscard]] virtual MediatorLawAt at(const RowVector& x) const = 0;
};

// Nadaraya weights in X over the treated units. With pooled = true the
// weights are uniform and ignore x.
class NadarayaTreatedLaw final : public TreatedMediatorLaw {
 public:
  NadarayaTreatedLaw(Matrix X_treated, const Matrix& Mj_treated, const Matrix& Mm_treated,
                     std::optional<KernelSpec> kernel = std::nullopt, bool pooled = false)
      : X_(std::move(X_treated)), pooled_(pooled) {
    if (X_.rows() < 1) fail_validation("NadarayaTreatedLaw", "no treated units");
    if (Mj_treated.rows() != X_.rows() || Mm_treated.rows() != X_.rows())
      fail_validation("NadarayaTreatedLaw", "mediator and covariate rows differ");
    kernel_ = kernel ? *kernel : nadaraya_default_kernel(X_);
    kernel_.check_dim(X_.cols());
    j_ = Atoms::from_rows(Mj_treated);
    m_ = Atoms::from_rows(Mm_treated);
  }

  [[nodiscard]] MediatorLawAt at(const RowVector& x) const override {
    if (x.size() != X_.cols()) fail_validation("NadarayaTreatedLaw", "covariate dimension mismatch");
    NadarayaWeights w;
    if (pooled_) {
      w.weights = Vector::Constant(X_.rows(), 1.0 / static_cast<double>(X_.rows()));
    } else {
      w = nadaraya_weights(kernel_, X_, x);
    }
    MediatorLawAt out;
    out.fallback = w.fallback;
    compress(j_, w.weights, out.mj, out.wj);
    compress(m_, w.weights, out.mm, out.wm);
    return out;
  }

  [[nodiscard]] const KernelSpec& kernel() const { return kernel_; }

 private:
  static void compress(const Atoms& atoms, const Vector& w, Matrix& points, Vector& weights) {
    Vector s = atoms.sum(w);
    const double cut = 1e-12 * s.maxCoeff();
    std::vector<Index> keep;
    for (Index u = 0; u < s.size(); ++u)
      if (s(u) > cut) keep.push_back(u);
    points = select_rows(atoms.points, keep);
    weights = select_rows(s, keep);
    weights /= weights.sum();
  }

  Matrix X_;
  KernelSpec kernel_;
  Atoms j_, m_;
  bool pooled_;
};

// Evaluable nuisances for the mediator-specific score. Inputs are
// pi(X), rho([M_j, X]), omega and mu([M_j, M_-j, X]), eta1([M_j, X]).
// The law drives the derived terms; eta1 is the plug-in average of mu over
// eta1_law (law if unset) unless an explicit eta1 is given.
struct MultiNuisances {
  Index dj = 0;
  Index dm = 0;
  std::function<Vector(const Matrix&)> pi;
  std::function<Vector(const Matrix&)> rho;
  std::function<Vector(const Matrix&)> omega;
  std::function<Vector(const Matrix&)> mu;
  std::function<Vector(const Matrix&)> eta1;
  std::shared_ptr<const TreatedMediatorLaw> law;
  std::shared_ptr<const TreatedMediatorLaw> eta1_law;
  const KernelRidgeModel* mu_kernel_ridge = nullptr;  // enables the factorized averages
};

// Per-observation values of every nuisance entering the score. The derived
// ones satisfy R = (1 - rho) omega and gamma1 = gamma11 - gamma10.
struct ZetaParts {
  Vector pi, rho, omega, mu, R, eta1, eta2, gamma11, gamma10, gamma1;
  Index fallbacks = 0;
};

namespace detail {

inline Matrix with_x(const Matrix& m, const RowVector& x) {
  Matrix out(m.rows(), m.cols() + x.size());
  out.leftCols(m.cols()) = m;
  out.rightCols(x.size()) = x.replicate(m.rows(), 1);
  return out;
}

inline Matrix pair_rows(const Matrix& mj, const Matrix& mm, const RowVector& x) {
  Matrix out(mj.rows() * mm.rows(), mj.cols() + mm.cols() + x.size());
  Index r = 0;
  for (Index v = 0; v < mj.rows(); ++v)
    for (Index u = 0; u < mm.rows(); ++u, ++r) out.row(r) << mj.row(v), mm.row(u), x;
  return out;
}

inline Vector checked_nuisance(Vector v, Index n, const char* name) {
  if (v.size() != n)
    fail_validation("zeta", "nuisance returned the wrong number of values", {{"nuisance", name}});
  for (Index i = 0; i < n; ++i)
    if (!std::isfinite(v(i)))
      fail_numerical("zeta", "non-finite nuisance value", {{"nuisance", name}, {"row", to_text(i)}});
  return v;
}

// Gaussian kernel ridge mu over [M_j, M_-j, X] splits into a product of
// block kernels, so averages over independent M_j and M_-j atom lists cost
// one pass over the anchors.
struct FactorizedMu {
  const KernelRidgeModel* model = nullptr;
  KernelSpec kj, km, kx;
  Matrix aj, am, ax;

  FactorizedMu(const KernelRidgeModel* m, Index dj, Index dm) : model(m) {
    if (!m || m->kernel.family != KernelFamily::gaussian_rbf) {
      model = nullptr;
      return;
    }
    Matrix abs = m->anchors.rowwise() + m->center;
    const Index dx = abs.cols() - dj - dm;
    kj = m->kernel.restricted(index_range(0, dj));
    km = m->kernel.restricted(index_range(dj, dm));
    kx = m->kernel.restricted(index_range(dj + dm, dx));
    aj = abs.leftCols(dj);
    am = abs.middleCols(dj, dm);
    ax = abs.rightCols(dx);
  }
  [[nodiscard]] bool active() const { return model != nullptr; }
};

}  // namespace detail

inline ZetaParts evaluate_parts(const MultiNuisances& nu, const Matrix& Mj, const Matrix& Mm, const Matrix& X) {
  const Index n = X.rows();
  if (Mj.rows() != n || Mm.rows() != n) fail_validation("zeta", "inputs differ in length");
  if (Mj.cols() != nu.dj || Mm.cols() != nu.dm) fail_validation("zeta", "mediator block widths do not match");
  if (!nu.pi || !nu.rho || !nu.omega || !nu.mu || !nu.law) fail_validation("zeta", "incomplete nuisances");
  ZetaParts p;
  const Matrix Z = detail::stack_z(Mj, Mm, X);
  const Matrix MjX = hcat(Mj, X);
  p.pi = detail::checked_nuisance(nu.pi(X), n, "pi");
  p.rho = detail::checked_nuisance(nu.rho(MjX), n, "rho");
  p.omega = detail::checked_nuisance(nu.omega(Z), n, "omega");
  p.mu = detail::checked_nuisance(nu.mu(Z), n, "mu");
  p.R = (Vector::Ones(n) - p.rho).cwiseProduct(p.omega);
  p.eta1.resize(n);
  p.eta2.resize(n);
  p.gamma11.resize(n);
  p.gamma10.resize(n);
  if (nu.eta1) p.eta1 = detail::checked_nuisance(nu.eta1(MjX), n, "eta1");

  const detail::FactorizedMu fm(nu.mu_kernel_ridge, nu.dj, nu.dm);
  const TreatedMediatorLaw& elaw = nu.eta1_law ? *nu.eta1_law : *nu.law;
  Atoms xa = Atoms::from_rows(X);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(xa.points.rows()));
  for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(xa.atom_of[static_cast<std::size_t>(i)])].push_back(i);

  for (Index u = 0; u < xa.points.rows(); ++u) {
    const std::vector<Index>& rows = members[static_cast<std::size_t>(u)];
    const RowVector x = xa.points.row(u);
    const MediatorLawAt L = nu.law->at(x);
    const MediatorLawAt E = nu.eta1_law ? elaw.at(x) : L;
    p.fallbacks += (L.fallback ? 1 : 0) + (nu.eta1_law && E.fallback ? 1 : 0);
    const Vector rhoV = detail::checked_nuisance(nu.rho(detail::with_x(L.mj, x)), L.mj.rows(), "rho");
    const Vector w1 = L.wj.cwiseProduct(Vector::Ones(rhoV.size()) - rhoV);
    const Matrix Mju = select_rows(Mj, rows), Mmu = select_rows(Mm, rows);

    Vector eta1V, eta1U, eta2U;
    if (fm.active()) {
      const KernelRidgeModel& km = *fm.model;
      const Vector cx = gram(fm.kx, Matrix(x), fm.ax).row(0).transpose().cwiseProduct(km.coefficients);
      const Matrix Gj = gram(fm.kj, L.mj, fm.aj);
      // eta2(m, x) = sum_v w1_v mu(v, m, x)
      const Vector sj1 = Gj.transpose() * w1;
      eta2U = gram(fm.km, Mmu, fm.am) * cx.cwiseProduct(sj1);
      eta2U.array() += km.y_mean * w1.sum();
      if (!nu.eta1) {
        const Vector sm = gram(fm.km, E.mm, fm.am).transpose() * E.wm;
        const Vector c = cx.cwiseProduct(sm);
        const double base = km.y_mean * E.wm.sum();
        eta1V = (nu.eta1_law ? gram(fm.kj, L.mj, fm.aj) : Gj) * c;
        eta1V.array() += base;
        eta1U = gram(fm.kj, Mju, fm.aj) * c;
        eta1U.array() += base;
      }
    } else {
      eta2U.resize(static_cast<Index>(rows.size()));
      Matrix q(L.mj.rows(), Z.cols());
      for (std::size_t t = 0; t < rows.size(); ++t) {
        for (Index v = 0; v < L.mj.rows(); ++v) q.row(v) << L.mj.row(v), Mmu.row(static_cast<Index>(t)), x;
        eta2U(static_cast<Index>(t)) = w1.dot(detail::checked_nuisance(nu.mu(q), q.rows(), "mu"));
      }
      if (!nu.eta1) {
        const Matrix pr = detail::pair_rows(L.mj, E.mm, x);
        const Vector mv = detail::checked_nuisance(nu.mu(pr), pr.rows(), "mu");
        eta1V.resize(L.mj.rows());
        for (Index v = 0; v < L.mj.rows(); ++v) eta1V(v) = E.wm.dot(mv.segment(v * E.mm.rows(), E.mm.rows()));
        const Matrix pu = detail::pair_rows(Mju, E.mm, x);
        const Vector mu_u = detail::checked_nuisance(nu.mu(pu), pu.rows(), "mu");
        eta1U.resize(Mju.rows());
        for (Index t = 0; t < Mju.rows(); ++t) eta1U(t) = E.wm.dot(mu_u.segment(t * E.mm.rows(), E.mm.rows()));
      }
    }
    if (nu.eta1) eta1V = detail::checked_nuisance(nu.eta1(detail::with_x(L.mj, x)), L.mj.rows(), "eta1");
    const double g11 = L.wj.dot(eta1V);
    const double g10 = L.wj.cwiseProduct(rhoV).dot(eta1V);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const Index i = rows[t];
      if (!nu.eta1) p.eta1(i) = eta1U(static_cast<Index>(t));
      p.eta2(i) = eta2U(static_cast<Index>(t));
      p.gamma11(i) = g11;
      p.gamma10(i) = g10;
    }
  }
  p.gamma1 = p.gamma11 - p.gamma10;
  for (const auto* v : {&p.eta1, &p.eta2, &p.gamma1})
    if (!v->allFinite()) fail_numerical("zeta", "non-finite derived nuisance");
  return p;
}

inline double zeta(double A, double Y, double pi, double R, double mu, double eta1, double eta2, double gamma11,
                   double gamma10) {
  const double gamma1 = gamma11 - gamma10;
  return A * pi * (R * (Y - mu) + eta2 - gamma1 + eta1 - gamma11) +
         (1.0 - A) * pi / (pi - 1.0) * (gamma10 - eta1) + gamma1;
}

inline Vector zeta_from_parts(const Vector& A, const Vector& Y, const ZetaParts& p) {
  Vector z(A.size());
  for (Index i = 0; i < A.size(); ++i)
    z(i) = zeta(A(i), Y(i), p.pi(i), p.R(i), p.mu(i), p.eta1(i), p.eta2(i), p.gamma11(i), p.gamma10(i));
  if (!z.allFinite()) fail_numerical("zeta", "non-finite score");
  return z;
}

inline Vector zeta_scores(const MultiDataset& d, int j, const MultiNuisances& nu) {
  return zeta_from_parts(d.A, d.Y, evaluate_parts(nu, d.mj(j), d.m_minus(j), d.X));
}

struct MultiDegradation {
  bool pi = false;
  bool rho = false;
  bool omega = false;
  bool mu = false;
  bool eta1 = false;
};

struct NuisanceFitMulti {
  int j = 0;
  Index dj = 0;
  Index dm = 0;
  BalanceFit pi;
  BalanceFit rho;
  BalanceFit omega;
  CmeFit cme;
  std::shared_ptr<const FittedRegressor> mu;
  std::shared_ptr<const TreatedMediatorLaw> law;
  std::shared_ptr<const TreatedMediatorLaw> eta1_law;

  [[nodiscard]] MultiNuisances functions() const {
    MultiNuisances nu;
    nu.dj = dj;
    nu.dm = dm;
    nu.pi = [f = pi](const Matrix& x) { return f.evaluate(x); };
    nu.rho = [f = rho](const Matrix& z) { return f.evaluate(z); };
    nu.omega = [f = omega](const Matrix& z) { return f.evaluate(z); };
    nu.mu = [f = mu](const Matrix& z) { return f->predict(z); };
    nu.law = law;
    nu.eta1_law = eta1_law;
    nu.mu_kernel_ridge = mu->kernel_ridge();
    return nu;
  }
};

inline NuisanceFitMulti fit_nuisances_multi(const MultiDataset& train, int j, const MultiBalancingConfig& cfg,
                                            const RegressorSpec& reg, const MultiDegradation& degrade = {},
                                            std::uint64_t seed = 0) {
  train.validate("fit_nuisances_multi");
  if (j < 0 || j >= train.k()) fail_validation("fit_nuisances_multi", "mediator index out of range");
  cfg.validate();
  reg.validate();
  NuisanceFitMulti f;
  f.j = j;
  const Matrix Mj = train.mj(j), Mm = train.m_minus(j);
  f.dj = Mj.cols();
  f.dm = Mm.cols();
  const std::vector<Index> tr = detail::treated_rows(train.A);
  if (tr.size() < 2) fail_validation("fit_nuisances_multi", "need at least two treated units");
  MultiBalancingConfig c = cfg;
  if (degrade.rho) c.rho = degraded_balancing(c.rho);
  if (degrade.omega) c.omega = degraded_balancing(c.omega);
  c.pi.seed = mix_seed(cfg.pi.seed ^ seed, 1);
  c.rho.seed = mix_seed(cfg.rho.seed ^ seed, 2);
  c.omega.seed = mix_seed(cfg.omega.seed ^ seed, 3);
  RegressorSpec r = degrade.mu ? degraded_regressor(reg) : reg;
  r.seed = mix_seed(reg.seed ^ seed, 4);
  const char* stage = "stage 1";
  try {
    // A degraded pi enters the score only; the stage 2 targets keep the
    // well-specified fit so that rho and omega stay correctly specified.
    f.pi = fit_pi_multi(train.X, train.A, c);
    const Vector pv = f.pi.evaluate(train.X);
    if (degrade.pi) {
      MultiBalancingConfig cd = c;
      cd.pi = degraded_balancing(c.pi);
      f.pi = fit_pi_multi(train.X, train.A, cd);
    }
    const Matrix Z = detail::stack_z(Mj, Mm, train.X);
    f.mu = std::make_shared<const FittedRegressor>(fit_regressor(select_rows(Z, tr), select_rows(train.Y, tr), r));
    stage = "stage 2";
    f.rho = fit_rho(hcat(Mj, train.X), train.A, pv, c);
    const Matrix Xt = select_rows(train.X, tr), Mjt = select_rows(Mj, tr), Mmt = select_rows(Mm, tr);
    f.cme = fit_cme(Mjt, Xt, cfg.cme_kernel, cfg.lambda_cme);
    f.omega = fit_omega(Mj, Mm, train.X, train.A, pv, f.cme, c);
    f.law = std::make_shared<const NadarayaTreatedLaw>(Xt, Mjt, Mmt);
    if (degrade.eta1) f.eta1_law = std::make_shared<const NadarayaTreatedLaw>(Xt, Mjt, Mmt, std::nullopt, true);
  } catch (const Error& e) {
    auto ctx = e.context();
    ctx["stage"] = stage;
    throw Error(e.kind(), "fit_nuisances_multi", e.detail(), ctx);
  }
  return f;
}

struct MultiCrossFit {
  FoldAssignment folds;
  Vector zeta;
  Diagnostics diagnostics;
};

inline MultiCrossFit cross_fit_multi(const MultiDataset& data, int j, int L, const MultiBalancingConfig& cfg,
                                     const RegressorSpec& reg, std::uint64_t seed,
                                     const MultiDegradation& degrade = {}) {
  data.validate("estimate_eie");
  if (j < 0 || j >= data.k()) fail_validation("estimate_eie", "mediator index out of range");
  MultiCrossFit out;
  out.folds = make_folds(data.n(), L, data.A, seed);
  out.zeta = Vector::Zero(data.n());
  Index clipped = 0, used = 0;
  for (int l = 0; l < L; ++l) {
    const std::vector<Index> ev = out.folds.members(l);
    try {
      const MultiDataset train = data.subset(out.folds.complement(l)), eval = data.subset(ev);
      const std::uint64_t fs = mix_seed(seed, 100 + static_cast<std::uint64_t>(l));
      const NuisanceFitMulti nf = fit_nuisances_multi(train, j, cfg, reg, degrade, fs);
      const std::string tag = "_fold" + std::to_string(l + 1);
      out.diagnostics.residuals.emplace_back("pi" + tag, nf.pi.train_residual);
      out.diagnostics.residuals.emplace_back("rho" + tag, nf.rho.train_residual);
      out.diagnostics.residuals.emplace_back("omega" + tag, nf.omega.train_residual);
      const ZetaParts parts = evaluate_parts(nf.functions(), eval.mj(j), eval.m_minus(j), eval.X);
      out.diagnostics.nadaraya_fallbacks += parts.fallbacks;
      const Vector z = zeta_from_parts(eval.A, eval.Y, parts);
      Index c = 0;
      (void)nf.pi.evaluate(eval.X, &c);
      clipped += c;
      used += eval.n();
      for (std::size_t t = 0; t < ev.size(); ++t) out.zeta(ev[t]) = z(static_cast<Index>(t));
    } catch (const Error& e) {
      auto ctx = e.context();
      ctx["fold"] = to_text(l + 1);
      throw Error(e.kind(), e.where(), e.detail(), ctx);
    }
  }
  out.diagnostics.clip_rate = used ? static_cast<double>(clipped) / static_cast<double>(used) : 0.0;
  if (out.diagnostics.nadaraya_fallbacks > 0)
    out.diagnostics.warnings.push_back("nadaraya weights fell back to uniform at some covariate rows");
  return out;
}

// Cross-fitted mediator-specific exit indirect effect (j is 0-based).
inline EstimateReport estimate_eie(const MultiDataset& data, int j, int L, const MultiBalancingConfig& cfg,
                                   const RegressorSpec& reg, double ci_level, std::uint64_t seed,
                                   const MultiDegradation& degrade = {}) {
  const MultiCrossFit cf = cross_fit_multi(data, j, L, cfg, reg, seed, degrade);
  EstimateReport r = report_from_scores("two-stage", "eie", cf.zeta, cf.folds, ci_level, true);
  r.mediator_index = j + 1;
  r.mediator_count = data.k();
  r.diagnostics = cf.diagnostics;
  r.flags.push_back("asymptotics-by-analogy");
  return r;
}

// Population laws for checking the five-term bias identity.
struct JointMediatorLaw {
  Matrix mj;
  Matrix mm;
  Vector p;
};

class MultiDgp {
 public:
  virtual ~MultiDgp() = default;
  [[nodiscard]] virtual MultiDataset sample(Index n, std::uint64_t seed) const = 0;
  [[nodiscard]] virtual int k() const = 0;
  [[nodiscard]] virtual double eie(int j) const = 0;
  // E[Y(1, M(1))] - E[Y(1, M(0))] with all mediators moved jointly.
  [[nodiscard]] virtual double total_indirect() const = 0;
  [[nodiscard]] virtual double treated_mean() const = 0;
  [[nodiscard]] virtual JointMediatorLaw mediator_law(int j, int a, const RowVector& x) const = 0;
  [[nodiscard]] virtual Vector propensity(const Matrix& X) const = 0;
  // True nuisances for block j; the law is the true treated law.
  [[nodiscard]] virtual MultiNuisances truth(int j) const = 0;
};

// Treated law read off a population joint law.
class PopulationTreatedLaw final : public TreatedMediatorLaw {
 public:
  PopulationTreatedLaw(const MultiDgp* dgp, int j) : dgp_(dgp), j_(j) {}

  [[nodiscard]] MediatorLawAt at(const RowVector& x) const override {
    const JointMediatorLaw J = dgp_->mediator_law(j_, 1, x);
    MediatorLawAt out;
    marginal(J.mj, J.p, out.mj, out.wj);
    marginal(J.mm, J.p, out.mm, out.wm);
    return out;
  }

  static void marginal(const Matrix& pts, const Vector& p, Matrix& atoms, Vector& w) {
    Atoms a = Atoms::from_rows(pts);
    atoms = a.points;
    w = a.sum(p);
  }

 private:
  const MultiDgp* dgp_;
  int j_;
};

struct BiasCheckMulti {
  double lhs = 0.0;
  double rhs = 0.0;
  double mc_se = 0.0;
  Index draws = 0;
  double terms[5] = {0, 0, 0, 0, 0};
};

// Monte Carlo check of
//   E[zeta] - Delta = E[(A pi~ - 1) E1[R~(mu - mu~)]]
//                   + E[(A pi~ - 1) (E1[eta2~(M_-j)] - gamma1~)]
//                   + E[((1 - A) pi~/(pi~ - 1) - 1) (gamma10~ - E0[eta1~(M_j)])]
//                   + E[E1[(R~ - R)(mu - mu~)]] + E[E1[(eta1* - eta1~)(rho - rho~)]],
// where E_a is the mediator law given A = a, X and
// eta1*(m_j, x) = E1[mu~(m_j, M_-j, x)]. The nuisances must carry the true
// treated law.
inline BiasCheckMulti bias_decomposition_check_multi(const MultiDgp& dgp, int j, const MultiNuisances& nu,
                                                     Index mc_size, std::uint64_t seed) {
  if (mc_size < 2) fail_validation("bias_decomposition_check_multi", "mc_size must be at least 2");
  const double delta = dgp.eie(j);
  const MultiNuisances tru = dgp.truth(j);
  const Index chunk = 100000;
  double s_l = 0, s_r = 0, s_d = 0, s_dd = 0, s_t[5] = {0, 0, 0, 0, 0};
  Index done = 0;
  for (std::uint64_t c = 0; done < mc_size; ++c) {
    const Index m = std::min(chunk, mc_size - done);
    const MultiDataset d = dgp.sample(m, mix_seed(seed, c));
    const Matrix Mj = d.mj(j), Mm = d.m_minus(j);
    const ZetaParts p = evaluate_parts(nu, Mj, Mm, d.X);
    const Vector z = zeta_from_parts(d.A, d.Y, p);
    // Conditional expectations depend on x only; compute them per covariate atom.
    Atoms xa = Atoms::from_rows(d.X);
    const Index U = xa.points.rows();
    Vector e1(U), e2(U), e3(U), e4(U), e5(U);
    for (Index u = 0; u < U; ++u) {
      const RowVector x = xa.points.row(u);
      const JointMediatorLaw J1 = dgp.mediator_law(j, 1, x), J0 = dgp.mediator_law(j, 0, x);
      const Index n1 = J1.p.size();
      const Matrix X1 = x.replicate(n1, 1);
      const ZetaParts q = evaluate_parts(nu, J1.mj, J1.mm, X1);
      const Matrix Z1 = detail::stack_z(J1.mj, J1.mm, X1);
      const Vector mu = tru.mu(Z1), rho = tru.rho(hcat(J1.mj, X1)), om = tru.omega(Z1);
      const Vector R = (Vector::Ones(n1) - rho).cwiseProduct(om);
      // eta1* from the fitted mu and the true M_-j law.
      Matrix mmA;
      Vector wm;
      PopulationTreatedLaw::marginal(J1.mm, J1.p, mmA, wm);
      Vector eta_star(n1);
      for (Index r = 0; r < n1; ++r) {
        Matrix rowsq(mmA.rows(), Z1.cols());
        for (Index t = 0; t < mmA.rows(); ++t) rowsq.row(t) << J1.mj.row(r), mmA.row(t), x;
        eta_star(r) = wm.dot(nu.mu(rowsq));
      }
      e1(u) = J1.p.dot(q.R.cwiseProduct(mu - q.mu));
      e2(u) = J1.p.dot(q.eta2) - q.gamma1(0);
      const Index n0 = J0.p.size();
      const Matrix X0 = x.replicate(n0, 1);
      const ZetaParts q0 = evaluate_parts(nu, J0.mj, J0.mm, X0);
      e3(u) = q.gamma10(0) - J0.p.dot(q0.eta1);
      e4(u) = J1.p.dot((q.R - R).cwiseProduct(mu - q.mu));
      e5(u) = J1.p.dot((eta_star - q.eta1).cwiseProduct(rho - q.rho));
    }
    for (Index i = 0; i < m; ++i) {
      const Index u = xa.atom_of[static_cast<std::size_t>(i)];
      const double A = d.A(i), pi = p.pi(i);
      const double t[5] = {(A * pi - 1) * e1(u), (A * pi - 1) * e2(u), ((1 - A) * pi / (pi - 1) - 1) * e3(u), e4(u),
                           e5(u)};
      const double r = t[0] + t[1] + t[2] + t[3] + t[4];
      const double l = z(i) - delta;
      for (int k = 0; k < 5; ++k) s_t[k] += t[k];
      s_l += l;
      s_r += r;
      s_d += l - r;
      s_dd += (l - r) * (l - r);
    }
    done += m;
  }
  BiasCheckMulti b;
  const double N = static_cast<double>(done);
  b.draws = done;
  b.lhs = s_l / N;
  b.rhs = s_r / N;
  for (int k = 0; k < 5; ++k) b.terms[k] = s_t[k] / N;
  const double md = s_d / N;
  b.mc_se = std::sqrt(std::max(0.0, s_dd / N - md * md) / (N - 1.0));
  return b;
}

struct InteractionReport {
  EstimateReport treated_mean;     // E[Y(1)]
  EstimateReport composite;        // E[Y(1, M(0))] with M the stacked mediators
  EstimateReport total_indirect;   // xi
  std::vector<EstimateReport> eie;
  EstimateReport interaction;
};

inline nlohmann::json to_json(const InteractionReport& r) {
  nlohmann::json j;
  j["treated_mean"] = to_json(r.treated_mean);
  j["composite"] = to_json(r.composite);
  j["total_indirect"] = to_json(r.total_indirect);
  j["eie"] = nlohmann::json::array();
  for (const auto& e : r.eie) j["eie"].push_back(to_json(e));
  j["interaction"] = to_json(r.interaction);
  return j;
}

// Decomposes the total indirect effect xi = E[Y(1)] - E[Y(1, M(0))] into the
// mediator-specific effects and the remainder INT. Variances come from the
// summed per-observation scores.
inline InteractionReport estimate_interaction(const MultiDataset& data, int L, const MultiBalancingConfig& cfg,
                                              const RegressorSpec& reg, double ci_level, std::uint64_t seed) {
  data.validate("estimate_interaction");
  const Index n = data.n();
  const Dataset comp = data.composite();
  SingleCrossFitOptions so;
  so.folds = L;
  so.seed = seed;
  const SingleCrossFit sc = cross_fit_single(comp, cfg.pi, reg, so);
  Vector s1(n), plug(n);
  for (int l = 0; l < L; ++l) {
    const std::vector<Index> ev = sc.folds.members(l);
    const Dataset train = comp.subset(sc.folds.complement(l)), eval = comp.subset(ev);
    const std::uint64_t fs = mix_seed(seed, 100 + static_cast<std::uint64_t>(l));
    MultiBalancingConfig c = cfg;
    c.pi.seed = mix_seed(cfg.pi.seed ^ fs, 5);
    const BalanceFit pi = fit_pi_multi(train.X, train.A, c);
    const std::vector<Index> tr = detail::arm_rows(train.A, 1.0);
    RegressorSpec r = reg;
    r.seed = mix_seed(reg.seed ^ fs, 6);
    const FittedRegressor m1 = fit_regressor(select_rows(train.X, tr), select_rows(train.Y, tr), r);
    const Vector w = pi.evaluate(eval.X), m = m1.predict(eval.X);
    for (std::size_t t = 0; t < ev.size(); ++t) {
      const Index i = static_cast<Index>(t);
      plug(ev[t]) = m(i);
      s1(ev[t]) = m(i) + eval.A(i) * w(i) * (eval.Y(i) - m(i));
    }
  }
  InteractionReport out;
  out.treated_mean = report_from_scores("plug-in", "treated_mean", plug, sc.folds, ci_level, true);
  const EstimateReport if_mean = report_from_scores("one-step", "treated_mean", s1, sc.folds, ci_level, true);
  out.treated_mean.sigma_hat = if_mean.sigma_hat;
  const double z = normal_critical_value(ci_level);
  auto set_ci = [&](EstimateReport& r) {
    const double half = z * r.sigma_hat / std::sqrt(static_cast<double>(n));
    r.ci_lower = r.estimate - half;
    r.ci_upper = r.estimate + half;
  };
  set_ci(out.treated_mean);
  out.composite = report_from_scores("two-stage", "psi_composite", sc.phi, sc.folds, ci_level, true);
  out.composite.diagnostics = sc.diagnostics;
  const Vector xi_scores = s1 - sc.phi;
  out.total_indirect = report_from_scores("plug-in-minus-two-stage", "total_indirect", xi_scores, sc.folds, ci_level,
                                          true);
  out.total_indirect.estimate = out.treated_mean.estimate - out.composite.estimate;
  set_ci(out.total_indirect);
  Vector int_scores = xi_scores;
  double int_est = out.total_indirect.estimate;
  for (int j = 0; j < data.k(); ++j) {
    const MultiCrossFit cf = cross_fit_multi(data, j, L, cfg, reg, seed);
    EstimateReport e = report_from_scores("two-stage", "eie", cf.zeta, cf.folds, ci_level, true);
    e.mediator_index = j + 1;
    e.mediator_count = data.k();
    e.diagnostics = cf.diagnostics;
    e.flags.push_back("asymptotics-by-analogy");
    int_scores -= cf.zeta;
    int_est -= e.estimate;
    out.eie.push_back(std::move(e));
  }
  out.interaction = report_from_scores("decomposition", "interaction", int_scores, sc.folds, ci_level, true);
  out.interaction.estimate = int_est;
  out.interaction.per_fold.clear();
  set_ci(out.interaction);
  out.interaction.mediator_count = data.k();
  out.interaction.flags.push_back("approximate-variance");
  out.interaction.flags.push_back("asymptotics-by-analogy");
  out.total_indirect.flags.push_back("approximate-variance");
  return out;
}

}  // namespace medbalance

#endif  // MEDBALANCE_MULTI_HPP
