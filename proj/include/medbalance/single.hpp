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

#ifndef MEDBALANCE_SINGLE_HPP
#define MEDBALANCE_SINGLE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <limits>
#include <string>
#include <vector>

#include "medbalance/balance.hpp"
#include "medbalance/dataset.hpp"
#include "medbalance/error.hpp"
#include "medbalance/parallel.hpp"
#include "medbalance/regress.hpp"
#include "medbalance/report.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

// Evaluable nuisances for the single-mediator score. Inputs: pi1(X),
// pi2(MX), mu1(MX), mu2(X), with MX = [M, X].
struct SingleNuisances {
  std::function<Vector(const Matrix&)> pi1;
  std::function<Vector(const Matrix&)> pi2;
  std::function<Vector(const Matrix&)> mu1;
  std::function<Vector(const Matrix&)> mu2;
};

// A data-generating process with known nuisances.
class SingleDgp {
 public:
  virtual ~SingleDgp() = default;
  [[nodiscard]] virtual Dataset sample(Index n, std::uint64_t seed) const = 0;
  [[nodiscard]] virtual double psi0() const = 0;
  [[nodiscard]] virtual Vector mu1(const Matrix& MX) const = 0;
  [[nodiscard]] virtual Vector mu2(const Matrix& X) const = 0;
  [[nodiscard]] virtual Vector pi1(const Matrix& X) const = 0;
  [[nodiscard]] virtual Vector pi2(const Matrix& MX) const = 0;
  [[nodiscard]] virtual Vector propensity(const Matrix& X) const = 0;

  [[nodiscard]] SingleNuisances truth() const {
    return SingleNuisances{[this](const Matrix& x) { return pi1(x); }, [this](const Matrix& mx) { return pi2(mx); },
                           [this](const Matrix& mx) { return mu1(mx); }, [this](const Matrix& x) { return mu2(x); }};
  }
};

inline double phi(double A, double Y, double pi1, double pi2, double mu1, double mu2) {
  return mu2 + (1.0 - A) * pi1 * (mu1 - mu2) + A * pi2 * (Y - mu1);
}

namespace detail {

inline Vector checked(Vector v, Index n, const char* name) {
  if (v.size() != n)
    fail_validation("phi", std::string("nuisance ") + name + " returned the wrong number of values");
  for (Index i = 0; i < n; ++i)
    if (!std::isfinite(v(i)))
      fail_numerical("phi", std::string("nuisance ") + name + " is not finite", {{"nuisance", name}, {"row", to_text(i)}});
  return v;
}

}  // namespace detail

inline Vector phi_scores(const Dataset& d, const SingleNuisances& nu) {
  const Index n = d.n();
  const Matrix MX = d.mx();
  const Vector p1 = detail::checked(nu.pi1(d.X), n, "pi1");
  const Vector p2 = detail::checked(nu.pi2(MX), n, "pi2");
  const Vector m1 = detail::checked(nu.mu1(MX), n, "mu1");
  const Vector m2 = detail::checked(nu.mu2(d.X), n, "mu2");
  Vector out(n);
  for (Index i = 0; i < n; ++i) out(i) = phi(d.A(i), d.Y(i), p1(i), p2(i), m1(i), m2(i));
  return out;
}

// Which nuisances are deliberately fitted badly (robustness studies).
struct Degradation {
  bool pi1 = false;
  bool pi2 = false;
  bool mu1 = false;
  bool mu2 = false;
};

// Over-smoothed balancing kernel: the weight class is nearly constant, so
// the fitted weights ignore the covariates.
inline BalancingConfig degraded_balancing(BalancingConfig cfg) {
  cfg.tune = false;
  cfg.pi_kernel.reset();
  cfg.h_kernel.reset();
  cfg.bandwidth_scale = 1000.0;
  cfg.lambda_pi = 1e-4;
  cfg.lambda_h = 1e-4;
  return cfg;
}

// Stumps for the ensemble, heavy shrinkage for kernel ridge.
inline RegressorSpec degraded_regressor(RegressorSpec r) {
  if (r.method == RegressorMethod::tree_ensemble) {
    r.max_depth = 1;
  } else {
    r.ridge = 1e4;
  }
  return r;
}

struct NuisanceFitSingle {
  BalanceFit pi1;
  BalanceFit pi2;
  FittedRegressor mu1;
  FittedRegressor mu2;

  [[nodiscard]] SingleNuisances functions() const {
    return SingleNuisances{[f = pi1](const Matrix& x) { return f.evaluate(x); },
                           [f = pi2](const Matrix& mx) { return f.evaluate(mx); },
                           [f = mu1](const Matrix& mx) { return f.predict(mx); },
                           [f = mu2](const Matrix& x) { return f.predict(x); }};
  }
};

namespace detail {

inline std::vector<Index> arm_rows(const Vector& A, double arm) {
  std::vector<Index> rows;
  for (Index i = 0; i < A.size(); ++i)
    if (A(i) == arm) rows.push_back(i);
  return rows;
}

inline FittedRegressor fit_outcome_mu1(const Dataset& train, const RegressorSpec& reg) {
  const std::vector<Index> t = arm_rows(train.A, 1.0);
  if (t.empty()) fail_validation("fit_nuisances_single", "training part has no treated units");
  return fit_regressor(select_rows(train.mx(), t), select_rows(train.Y, t), reg);
}

inline FittedRegressor fit_outcome_mu2(const Dataset& train, const FittedRegressor& mu1, const RegressorSpec& reg) {
  const std::vector<Index> c = arm_rows(train.A, 0.0);
  if (c.empty()) fail_validation("fit_nuisances_single", "training part has no control units");
  const Vector pseudo = mu1.predict(select_rows(train.mx(), c));
  return fit_regressor(select_rows(train.X, c), pseudo, reg);
}

}  // namespace detail

inline NuisanceFitSingle fit_nuisances_single(const Dataset& train, const BalancingConfig& cfg, const RegressorSpec& reg,
                                              const Degradation& degrade = {}, std::uint64_t seed = 0) {
  train.validate("fit_nuisances_single");
  BalancingConfig c1 = degrade.pi1 ? degraded_balancing(cfg) : cfg;
  BalancingConfig c2 = degrade.pi2 ? degraded_balancing(cfg) : cfg;
  c1.seed = mix_seed(cfg.seed ^ seed, 1);
  c2.seed = mix_seed(cfg.seed ^ seed, 2);
  RegressorSpec r1 = degrade.mu1 ? degraded_regressor(reg) : reg;
  RegressorSpec r2 = degrade.mu2 ? degraded_regressor(reg) : reg;
  r1.seed = mix_seed(reg.seed ^ seed, 3);
  r2.seed = mix_seed(reg.seed ^ seed, 4);
  NuisanceFitSingle f;
  f.pi1 = fit_pi1(train.X, train.A, c1);
  f.pi2 = fit_pi2(train.mx(), train.A, f.pi1.evaluate(train.X), c2);
  f.mu1 = detail::fit_outcome_mu1(train, r1);
  f.mu2 = detail::fit_outcome_mu2(train, f.mu1, r2);
  return f;
}

// Options for the triply robust plug-in with Nadaraya-Watson densities.
struct TtsOptions {
  bool trim = false;
  double trim_epsilon = 0.01;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vector rule_of_thumb_bandwidths(const Matrix& z) {
  const double n = static_cast<double>(std::max<Index>(z.rows(), 2));
  return 1.06 * column_scales(z) * std::pow(n, -0.2);
}

// Per-observation score of the plug-in estimator whose nuisances are a
// propensity regression and kernel conditional densities of M.
// ratio = p(m | 0, x) / p(m | 1, x), p = p(A = 1 | x), eta = E[mu1(M, x) | A = 0, x].
inline double tts_score(double A, double Y, double p, double ratio, double mu1, double eta) {
  return A * ratio / p * (Y - mu1) + (1.0 - A) / (1.0 - p) * (mu1 - eta) + eta;
}

inline Vector tts_scores(const Dataset& train, const Dataset& eval, const FittedRegressor& mu1,
                         const RegressorSpec& reg, const TtsOptions& opt) {
  RegressorSpec rp = reg;
  rp.seed = mix_seed(reg.seed, 17);
  const FittedRegressor prop = fit_regressor(train.X, train.A, rp);
  Vector p = prop.predict(eval.X);
  const Vector hx = rule_of_thumb_bandwidths(train.X);
  const Vector hm = rule_of_thumb_bandwidths(train.M);
  const std::vector<Index> arm[2] = {arm_rows(train.A, 0.0), arm_rows(train.A, 1.0)};
  const Matrix mx_eval = eval.mx();
  const Vector mu_eval = mu1.predict(mx_eval);
  const Index d_m = train.M.cols(), d_x = train.X.cols();
  Vector out(eval.n());
  std::vector<double> lx, lxm;
  for (Index s = 0; s < eval.n(); ++s) {
    double logp[2];
    std::vector<double> wx0;
    for (int a = 0; a < 2; ++a) {
      lx.clear();
      lxm.clear();
      for (Index i : arm[a]) {
        double qx = 0.0, qm = 0.0;
        for (Index k = 0; k < d_x; ++k) {
          const double u = (eval.X(s, k) - train.X(i, k)) / hx(k);
          qx += u * u;
        }
        for (Index k = 0; k < d_m; ++k) {
          const double u = (eval.M(s, k) - train.M(i, k)) / hm(k);
          qm += u * u;
        }
        lx.push_back(-0.5 * qx);
        lxm.push_back(-0.5 * (qx + qm));
      }
      logp[a] = log_sum_exp(lxm) - log_sum_exp(lx);
      if (a == 0) wx0 = lx;
    }
    // eta(x) = sum over controls of w_i(x) mu1(M_i, x)
    const double lse = log_sum_exp(wx0);
    std::vector<Index> keep;
    std::vector<double> w;
    for (std::size_t t = 0; t < wx0.size(); ++t) {
      const double wt = std::exp(wx0[t] - lse);
      if (wt > 1e-15) {
        keep.push_back(arm[0][t]);
        w.push_back(wt);
      }
    }
    Matrix q(static_cast<Index>(keep.size()), d_m + d_x);
    for (std::size_t t = 0; t < keep.size(); ++t) {
      q.row(static_cast<Index>(t)).head(d_m) = train.M.row(keep[t]);
      q.row(static_cast<Index>(t)).tail(d_x) = eval.X.row(s);
    }
    const Vector mq = mu1.predict(q);
    double eta = 0.0, wsum = 0.0;
    for (std::size_t t = 0; t < keep.size(); ++t) {
      eta += w[t] * mq(static_cast<Index>(t));
      wsum += w[t];
    }
    eta /= wsum;
    double ps = p(s);
    double ratio = std::exp(logp[0] - logp[1]);
    if (opt.trim) {
      ps = std::clamp(ps, opt.trim_epsilon, 1.0 - opt.trim_epsilon);
      ratio = std::min(ratio, 1.0 / opt.trim_epsilon);
    }
    out(s) = tts_score(eval.A(s), eval.Y(s), ps, ratio, mu_eval(s), eta);
  }
  return out;
}

}  // namespace detail

// Per-observation cross-fitted scores for the single-mediator estimators.
struct SingleCrossFit {
  FoldAssignment folds;
  Vector phi;    // two-stage score
  Vector mu2;    // naive plug-in
  Vector tts;    // density-based baseline
  bool has_phi = false;
  bool has_tts = false;
  Diagnostics diagnostics;
};

struct SingleCrossFitOptions {
  int folds = 4;
  std::uint64_t seed = 0;
  bool two_stage = true;
  bool tts = false;
  TtsOptions tts_options;
  Degradation degrade;
};

inline SingleCrossFit cross_fit_single(const Dataset& data, const BalancingConfig& cfg, const RegressorSpec& reg,
                                       const SingleCrossFitOptions& opt) {
  data.validate("cross_fit_single");
  cfg.validate();
  reg.validate();
  SingleCrossFit out;
  out.folds = make_folds(data.n(), opt.folds, data.A, opt.seed);
  const Index n = data.n();
  out.phi = Vector::Zero(n);
  out.mu2 = Vector::Zero(n);
  out.tts = Vector::Zero(n);
  out.has_phi = opt.two_stage;
  out.has_tts = opt.tts;
  Index clipped = 0, used = 0;
  for (int l = 0; l < opt.folds; ++l) {
    try {
      const std::vector<Index> ev = out.folds.members(l);
      const Dataset train = data.subset(out.folds.complement(l));
      const Dataset eval = data.subset(ev);
      const std::uint64_t fold_seed = mix_seed(opt.seed, 100 + static_cast<std::uint64_t>(l));
      RegressorSpec r1 = opt.degrade.mu1 ? degraded_regressor(reg) : reg;
      RegressorSpec r2 = opt.degrade.mu2 ? degraded_regressor(reg) : reg;
      r1.seed = mix_seed(reg.seed ^ fold_seed, 3);
      r2.seed = mix_seed(reg.seed ^ fold_seed, 4);
      const FittedRegressor mu1 = detail::fit_outcome_mu1(train, r1);
      const FittedRegressor mu2 = detail::fit_outcome_mu2(train, mu1, r2);
      const Vector m2 = mu2.predict(eval.X);
      for (std::size_t t = 0; t < ev.size(); ++t) out.mu2(ev[t]) = m2(static_cast<Index>(t));
      if (opt.two_stage) {
        BalancingConfig c1 = opt.degrade.pi1 ? degraded_balancing(cfg) : cfg;
        BalancingConfig c2 = opt.degrade.pi2 ? degraded_balancing(cfg) : cfg;
        c1.seed = mix_seed(cfg.seed ^ fold_seed, 1);
        c2.seed = mix_seed(cfg.seed ^ fold_seed, 2);
        const BalanceFit pi1 = fit_pi1(train.X, train.A, c1);
        const BalanceFit pi2 = fit_pi2(train.mx(), train.A, pi1.evaluate(train.X), c2);
        out.diagnostics.residuals.emplace_back("pi1_fold" + std::to_string(l + 1), pi1.train_residual);
        out.diagnostics.residuals.emplace_back("pi2_fold" + std::to_string(l + 1), pi2.train_residual);
        const Matrix emx = eval.mx();
        const Vector p1raw = pi1.evaluate_raw(eval.X), p2raw = pi2.evaluate_raw(emx);
        const Vector p1 = detail::clipped(p1raw, pi1.clip), p2 = detail::clipped(p2raw, pi2.clip);
        const Vector m1 = mu1.predict(emx);
        for (std::size_t t = 0; t < ev.size(); ++t) {
          const Index i = static_cast<Index>(t);
          const double A = eval.A(i);
          const double raw = A == 1.0 ? p2raw(i) : p1raw(i);
          const ClipBounds& cb = A == 1.0 ? pi2.clip : pi1.clip;
          clipped += (raw < cb.lower || raw > cb.upper) ? 1 : 0;
          ++used;
          out.phi(ev[t]) = phi(A, eval.Y(i), p1(i), p2(i), m1(i), m2(i));
        }
      }
      if (opt.tts) {
        const Vector s = detail::tts_scores(train, eval, mu1, r1, opt.tts_options);
        for (std::size_t t = 0; t < ev.size(); ++t) out.tts(ev[t]) = s(static_cast<Index>(t));
      }
    } catch (const Error& e) {
      auto ctx = e.context();
      ctx["fold"] = to_text(l + 1);
      throw Error(e.kind(), e.where(), e.detail(), ctx);
    }
  }
  out.diagnostics.clip_rate = used ? static_cast<double>(clipped) / static_cast<double>(used) : 0.0;
  return out;
}

// psi-hat is the mean of the per-fold means; sigma-hat^2 averages the
// within-fold second moments of (score - psi-hat).
inline EstimateReport report_from_scores(const std::string& estimator, const std::string& estimand, const Vector& scores,
                                         const FoldAssignment& folds, double ci_level, bool calibrated) {
  if (!(ci_level > 0.0 && ci_level < 1.0)) fail_validation("estimate", "ci_level must lie in (0, 1)");
  EstimateReport r;
  r.estimator = estimator;
  r.estimand = estimand;
  r.ci_level = ci_level;
  r.n = scores.size();
  r.folds = folds.folds;
  r.calibrated = calibrated;
  r.scores = scores;
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(folds.folds));
  for (std::size_t i = 0; i < folds.fold_of.size(); ++i) members[static_cast<std::size_t>(folds.fold_of[i])].push_back(static_cast<Index>(i));
  double total = 0.0;
  for (const auto& m : members) {
    double s = 0.0;
    for (Index i : m) s += scores(i);
    r.per_fold.push_back(s / static_cast<double>(m.size()));
    total += r.per_fold.back();
  }
  r.estimate = total / static_cast<double>(folds.folds);
  double var = 0.0;
  for (const auto& m : members) {
    double s = 0.0;
    for (Index i : m) s += (scores(i) - r.estimate) * (scores(i) - r.estimate);
    var += s / static_cast<double>(m.size());
  }
  var /= static_cast<double>(folds.folds);
  r.sigma_hat = std::sqrt(var);
  const double half = normal_critical_value(ci_level) * r.sigma_hat / std::sqrt(static_cast<double>(r.n));
  r.ci_lower = r.estimate - half;
  r.ci_upper = r.estimate + half;
  if (!std::isfinite(r.estimate)) r.flags.push_back("non-finite");
  if (!calibrated) r.flags.push_back("non-calibrated");
  return r;
}

inline EstimateReport estimate_psi_2s(const Dataset& data, int L, const BalancingConfig& cfg, const RegressorSpec& reg,
                                      double ci_level, std::uint64_t seed) {
  SingleCrossFitOptions opt;
  opt.folds = L;
  opt.seed = seed;
  const SingleCrossFit cf = cross_fit_single(data, cfg, reg, opt);
  EstimateReport r = report_from_scores("two-stage", "psi", cf.phi, cf.folds, ci_level, true);
  r.diagnostics = cf.diagnostics;
  return r;
}

inline EstimateReport estimate_naive(const Dataset& data, int L, const RegressorSpec& reg, double ci_level,
                                     std::uint64_t seed) {
  SingleCrossFitOptions opt;
  opt.folds = L;
  opt.seed = seed;
  opt.two_stage = false;
  const SingleCrossFit cf = cross_fit_single(data, BalancingConfig(), reg, opt);
  return report_from_scores("naive", "psi", cf.mu2, cf.folds, ci_level, false);
}

inline EstimateReport estimate_tts(const Dataset& data, int L, const RegressorSpec& reg, double ci_level,
                                   std::uint64_t seed, const TtsOptions& tts = {}) {
  SingleCrossFitOptions opt;
  opt.folds = L;
  opt.seed = seed;
  opt.two_stage = false;
  opt.tts = true;
  opt.tts_options = tts;
  const SingleCrossFit cf = cross_fit_single(data, BalancingConfig(), reg, opt);
  EstimateReport r = report_from_scores("tts", "psi", cf.tts, cf.folds, ci_level, false);
  if (tts.trim) r.flags.push_back("trimmed");
  return r;
}

// Monte Carlo check of the exact bias expansion of the two-stage score:
//   E[phi] - psi0 = E[((1 - A) pi1~ - 1)(mu2 - mu2~)] + E[(A pi2~ - (1 - A) pi1~)(mu1 - mu1~)].
// mc_se is the standard error of the per-draw difference of the two sides.
struct BiasCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double mc_se = 0.0;
  Index draws = 0;
};

inline BiasCheck bias_decomposition_check(const SingleDgp& dgp, const SingleNuisances& nu, Index mc_size,
                                          std::uint64_t seed) {
  if (mc_size < 2) fail_validation("bias_decomposition_check", "mc_size must be at least 2");
  const double psi0 = dgp.psi0();
  const Index chunk = 100000;
  double s_lhs = 0, s_rhs = 0, s_d = 0, s_dd = 0;
  Index done = 0;
  for (std::uint64_t c = 0; done < mc_size; ++c) {
    const Index m = std::min(chunk, mc_size - done);
    const Dataset d = dgp.sample(m, mix_seed(seed, c));
    const Matrix MX = d.mx();
    const Vector f = phi_scores(d, nu);
    const Vector p1 = nu.pi1(d.X), p2 = nu.pi2(MX), mh1 = nu.mu1(MX), mh2 = nu.mu2(d.X);
    const Vector t1 = dgp.mu1(MX), t2 = dgp.mu2(d.X);
    for (Index i = 0; i < m; ++i) {
      const double A = d.A(i);
      const double r = ((1 - A) * p1(i) - 1) * (t2(i) - mh2(i)) + (A * p2(i) - (1 - A) * p1(i)) * (t1(i) - mh1(i));
      const double l = f(i) - psi0;
      s_lhs += l;
      s_rhs += r;
      s_d += l - r;
      s_dd += (l - r) * (l - r);
    }
    done += m;
  }
  BiasCheck b;
  const double N = static_cast<double>(done);
  b.draws = done;
  b.lhs = s_lhs / N;
  b.rhs = s_rhs / N;
  const double md = s_d / N;
  b.mc_se = std::sqrt(std::max(0.0, s_dd / N - md * md) / (N - 1.0));
  return b;
}

enum class Scenario { all_true, pi_pair, mu_pair, pi1_mu1, all_false };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::all_true: return "all-true";
    case Scenario::pi_pair: return "pi1-pi2";
    case Scenario::mu_pair: return "mu1-mu2";
    case Scenario::pi1_mu1: return "pi1-mu1";
    case Scenario::all_false: return "all-false";
  }
  return "unknown";
}

// Nuisances outside the scenario's correct set are degraded.
inline Degradation degradation_for(Scenario s) {
  switch (s) {
    case Scenario::all_true: return {false, false, false, false};
    case Scenario::pi_pair: return {false, false, true, true};
    case Scenario::mu_pair: return {true, true, false, false};
    case Scenario::pi1_mu1: return {false, true, false, true};
    case Scenario::all_false: return {true, true, true, true};
  }
  return {};
}

inline const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> s{Scenario::all_true, Scenario::pi_pair, Scenario::mu_pair, Scenario::pi1_mu1,
                                       Scenario::all_false};
  return s;
}

// Every scenario is run on the same simulated datasets.
struct ScenarioCrossFit {
  FoldAssignment folds;
  std::vector<Vector> phi;  // one score vector per degradation pattern
};

// Two-stage scores for several degradation patterns on one dataset. Each
// distinct nuisance fit is computed once per fold and shared; the result
// equals separate cross_fit_single runs with the same seed.
inline ScenarioCrossFit cross_fit_scenarios(const Dataset& data, const BalancingConfig& cfg, const RegressorSpec& reg,
                                            const std::vector<Degradation>& patterns, int folds, std::uint64_t seed) {
  data.validate("cross_fit_scenarios");
  cfg.validate();
  reg.validate();
  ScenarioCrossFit out;
  out.folds = make_folds(data.n(), folds, data.A, seed);
  out.phi.assign(patterns.size(), Vector::Zero(data.n()));
  for (int l = 0; l < folds; ++l) {
    const std::vector<Index> ev = out.folds.members(l);
    const Dataset train = data.subset(out.folds.complement(l)), eval = data.subset(ev);
    const std::uint64_t fs = mix_seed(seed, 100 + static_cast<std::uint64_t>(l));
    const Matrix emx = eval.mx();
    std::map<bool, BalanceFit> pi1;
    std::map<std::pair<bool, bool>, Vector> pi2_eval;  // (pi1 degraded, pi2 degraded)
    std::map<bool, FittedRegressor> mu1;
    std::map<std::pair<bool, bool>, Vector> mu2_eval;
    std::map<bool, Vector> mu1_eval;
    for (std::size_t k = 0; k < patterns.size(); ++k) {
      const Degradation& g = patterns[k];
      if (!pi1.count(g.pi1)) {
        BalancingConfig c1 = g.pi1 ? degraded_balancing(cfg) : cfg;
        c1.seed = mix_seed(cfg.seed ^ fs, 1);
        pi1.emplace(g.pi1, fit_pi1(train.X, train.A, c1));
      }
      const BalanceFit& p1 = pi1.at(g.pi1);
      const std::pair<bool, bool> k2{g.pi1, g.pi2};
      if (!pi2_eval.count(k2)) {
        BalancingConfig c2 = g.pi2 ? degraded_balancing(cfg) : cfg;
        c2.seed = mix_seed(cfg.seed ^ fs, 2);
        pi2_eval.emplace(k2, fit_pi2(train.mx(), train.A, p1.evaluate(train.X), c2).evaluate(emx));
      }
      if (!mu1.count(g.mu1)) {
        RegressorSpec r1 = g.mu1 ? degraded_regressor(reg) : reg;
        r1.seed = mix_seed(reg.seed ^ fs, 3);
        mu1.emplace(g.mu1, detail::fit_outcome_mu1(train, r1));
        mu1_eval.emplace(g.mu1, mu1.at(g.mu1).predict(emx));
      }
      const std::pair<bool, bool> km{g.mu1, g.mu2};
      if (!mu2_eval.count(km)) {
        RegressorSpec r2 = g.mu2 ? degraded_regressor(reg) : reg;
        r2.seed = mix_seed(reg.seed ^ fs, 4);
        mu2_eval.emplace(km, detail::fit_outcome_mu2(train, mu1.at(g.mu1), r2).predict(eval.X));
      }
      const Vector p1v = p1.evaluate(eval.X);
      const Vector& p2v = pi2_eval.at(k2);
      const Vector& m1 = mu1_eval.at(g.mu1);
      const Vector& m2 = mu2_eval.at(km);
      for (std::size_t t = 0; t < ev.size(); ++t) {
        const Index i = static_cast<Index>(t);
        out.phi[k](ev[t]) = phi(eval.A(i), eval.Y(i), p1v(i), p2v(i), m1(i), m2(i));
      }
    }
  }
  return out;
}

inline ReplicationTable robustness_grid(const SingleDgp& dgp, const std::vector<Scenario>& scenarios, Index n, int reps,
                                        const BalancingConfig& cfg, const RegressorSpec& reg, std::uint64_t seed,
                                        int folds = 4, unsigned threads = 0, double ci_level = 0.95) {
  if (reps < 1) fail_validation("robustness_grid", "reps must be positive");
  std::vector<std::vector<double>> est(scenarios.size(), std::vector<double>(static_cast<std::size_t>(reps)));
  std::vector<std::vector<std::pair<double, double>>> ci(
      scenarios.size(), std::vector<std::pair<double, double>>(static_cast<std::size_t>(reps)));
  std::vector<Degradation> patterns;
  for (Scenario s : scenarios) patterns.push_back(degradation_for(s));
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        const Dataset d = dgp.sample(n, mix_seed(seed, r));
        const ScenarioCrossFit cf = cross_fit_scenarios(d, cfg, reg, patterns, folds, mix_seed(seed ^ 0x5bd1e995ull, r));
        for (std::size_t s = 0; s < scenarios.size(); ++s) {
          const EstimateReport rep = report_from_scores("two-stage", "psi", cf.phi[s], cf.folds, ci_level, true);
          est[s][r] = rep.estimate;
          ci[s][r] = {rep.ci_lower, rep.ci_upper};
        }
      },
      threads);
  ReplicationTable t;
  for (std::size_t s = 0; s < scenarios.size(); ++s)
    t.rows.push_back(summarize_replications(to_string(scenarios[s]), n, est[s], dgp.psi0(), &ci[s]));
  return t;
}

// Natural effects on the odds-ratio scale for a binary outcome.
struct OddsRatio {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct OddsRatioReport {
  double p11 = 0.0;  // P(Y(1, M(1)) = 1)
  double p10 = 0.0;  // P(Y(1, M(0)) = 1)
  double p00 = 0.0;  // P(Y(0, M(0)) = 1)
  OddsRatio nie, nde, total;
  double ci_level = 0.95;
  Index n = 0;
  std::vector<std::string> flags;
};

inline nlohmann::json to_json(const OddsRatioReport& r) {
  auto o = [](const OddsRatio& x) {
    return nlohmann::json{{"value", json_number(x.value)}, {"lower", json_number(x.lower)}, {"upper", json_number(x.upper)}};
  };
  return {{"p11", r.p11}, {"p10", r.p10},        {"p00", r.p00},     {"or_nie", o(r.nie)},
          {"or_nde", o(r.nde)}, {"or_total", o(r.total)}, {"ci_level", r.ci_level}, {"n", r.n},
          {"flags", r.flags}};
}

// p11 and p00 are cross-fitted plug-in means of E[Y | A = a, X]; p10 is the
// two-stage estimate. Variances come from the per-observation influence
// scores; the arm scores use balancing weights for 1 / p(A = a | X).
inline OddsRatioReport estimate_odds_ratios(const Dataset& data, int L, const BalancingConfig& cfg,
                                            const RegressorSpec& reg, double ci_level, std::uint64_t seed) {
  data.validate("estimate_odds_ratios");
  if (data.outcome_type != OutcomeType::binary)
    fail_validation("estimate_odds_ratios", "odds ratios need a binary outcome");
  const Index n = data.n();
  const FoldAssignment folds = make_folds(n, L, data.A, seed);
  Vector s11(n), s00(n), s10(n), plug11(n), plug00(n);
  for (int l = 0; l < L; ++l) {
    const std::vector<Index> ev = folds.members(l);
    const Dataset train = data.subset(folds.complement(l)), eval = data.subset(ev);
    const std::uint64_t fs = mix_seed(seed, 100 + static_cast<std::uint64_t>(l));
    const NuisanceFitSingle nf = fit_nuisances_single(train, cfg, reg, {}, fs);
    const Vector ph = phi_scores(eval, nf.functions());
    BalancingConfig ca = cfg;
    ca.seed = mix_seed(cfg.seed ^ fs, 5);
    const BalanceFit piA = fit_balancing_weights(train.X, train.A, Vector::Ones(train.n()), ca,
                                                 {1.0, 1.0 / cfg.trim_epsilon}, "estimate_odds_ratios");
    const Vector wA = piA.evaluate(eval.X), w0 = nf.pi1.evaluate(eval.X);
    FittedRegressor m[2];
    for (int a = 0; a < 2; ++a) {
      const std::vector<Index> rows = detail::arm_rows(train.A, a);
      RegressorSpec ra = reg;
      ra.seed = mix_seed(reg.seed ^ fs, 6 + static_cast<std::uint64_t>(a));
      m[a] = fit_regressor(select_rows(train.X, rows), select_rows(train.Y, rows), ra);
    }
    const Vector m1 = m[1].predict(eval.X), m0 = m[0].predict(eval.X);
    for (std::size_t t = 0; t < ev.size(); ++t) {
      const Index i = static_cast<Index>(t);
      const double A = eval.A(i), Y = eval.Y(i);
      plug11(ev[t]) = m1(i);
      plug00(ev[t]) = m0(i);
      s11(ev[t]) = m1(i) + A * wA(i) * (Y - m1(i));
      s00(ev[t]) = m0(i) + (1 - A) * w0(i) * (Y - m0(i));
      s10(ev[t]) = ph(i);
    }
  }
  OddsRatioReport r;
  r.ci_level = ci_level;
  r.n = n;
  r.p11 = report_from_scores("plug-in", "p11", plug11, folds, ci_level, false).estimate;
  r.p00 = report_from_scores("plug-in", "p00", plug00, folds, ci_level, false).estimate;
  r.p10 = report_from_scores("two-stage", "p10", s10, folds, ci_level, true).estimate;
  for (double p : {r.p11, r.p10, r.p00})
    if (!(p > 0.0 && p < 1.0))
      fail_numerical("estimate_odds_ratios", "an arm mean fell outside (0, 1); consider trimming the weights",
                     {{"value", to_text(p)}});
  const Vector* s[3] = {&s11, &s10, &s00};
  Eigen::Matrix3d cov;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const Vector ca = s[a]->array() - s[a]->mean(), cb = s[b]->array() - s[b]->mean();
      cov(a, b) = ca.dot(cb) / static_cast<double>(n) / static_cast<double>(n);
    }
  const Eigen::Vector3d dl(1.0 / (r.p11 * (1 - r.p11)), 1.0 / (r.p10 * (1 - r.p10)), 1.0 / (r.p00 * (1 - r.p00)));
  auto logit = [](double p) { return std::log(p / (1 - p)); };
  const double z = normal_critical_value(ci_level);
  auto make = [&](double log_or, const Eigen::Vector3d& g) {
    const double se = std::sqrt(std::max(0.0, g.dot(cov * g)));
    return OddsRatio{std::exp(log_or), std::exp(log_or - z * se), std::exp(log_or + z * se)};
  };
  r.nie = make(logit(r.p11) - logit(r.p10), Eigen::Vector3d(dl(0), -dl(1), 0));
  r.nde = make(logit(r.p10) - logit(r.p00), Eigen::Vector3d(0, dl(1), -dl(2)));
  r.total = make(logit(r.p11) - logit(r.p00), Eigen::Vector3d(dl(0), 0, -dl(2)));
  r.total.value = r.nie.value * r.nde.value;
  r.flags.push_back("delta-method");
  return r;
}

}  // namespace medbalance

#endif  // MEDBALANCE_SINGLE_HPP
