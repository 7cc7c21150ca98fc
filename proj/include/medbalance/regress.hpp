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

#ifndef MEDBALANCE_REGRESS_HPP
#define MEDBALANCE_REGRESS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "medbalance/error.hpp"
#include "medbalance/kernel.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

enum class RegressorMethod { kernel_ridge, tree_ensemble };

inline std::string to_string(RegressorMethod m) {
  return m == RegressorMethod::kernel_ridge ? "kernel-ridge" : "tree-ensemble";
}

struct RegressorSpec {
  RegressorMethod method = RegressorMethod::kernel_ridge;
  // Kernel ridge. Kernel defaults to a Gaussian on standardized inputs;
  // ridge, if unset, is picked from ridge_grid by hold-out error.
  std::optional<KernelSpec> kernel;
  std::optional<double> ridge;
  std::vector<double> ridge_grid{1e-3, 1e-2, 1e-1, 1.0, 10.0};
  // Tree ensemble. mtry = 0 means max(1, d / 3).
  int trees = 100;
  int max_depth = 8;
  int min_leaf = 5;
  int mtry = 0;
  std::uint64_t seed = 7;

  static RegressorSpec kernel_ridge(std::optional<double> ridge = std::nullopt) {
    RegressorSpec s;
    s.method = RegressorMethod::kernel_ridge;
    s.ridge = ridge;
    return s;
  }
  static RegressorSpec tree_ensemble(int trees = 100, int depth = 8, int min_leaf = 5) {
    RegressorSpec s;
    s.method = RegressorMethod::tree_ensemble;
    s.trees = trees;
    s.max_depth = depth;
    s.min_leaf = min_leaf;
    return s;
  }

  void validate() const {
    if (method == RegressorMethod::kernel_ridge) {
      if (kernel) kernel->validate();
      if (ridge && !(*ridge >= 0.0)) fail_validation("RegressorSpec", "ridge must be non-negative");
      if (!ridge && ridge_grid.empty()) fail_validation("RegressorSpec", "empty ridge grid");
    } else {
      if (trees < 1 || max_depth < 0 || min_leaf < 1)
        fail_validation("RegressorSpec", "invalid tree-ensemble settings");
    }
  }
};

// Fitted kernel ridge expansion: f(z) = y_mean + sum_a coef_a k(z - center, anchor_a).
struct KernelRidgeModel {
  KernelSpec kernel;
  Matrix anchors;  // centered atom coordinates
  Vector coefficients;
  RowVector center;
  double y_mean = 0.0;
  double ridge = 0.0;

  [[nodiscard]] Vector predict(const Matrix& z) const {
    Matrix zc = z.rowwise() - center;
    Vector out = gram(kernel, zc, anchors) * coefficients;
    out.array() += y_mean;
    return out;
  }
};

namespace detail {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  void fit(const Matrix& x, const Vector& y, std::vector<Index> rows, int max_depth, int min_leaf, int mtry,
           std::mt19937_64& rng) {
    nodes_.clear();
    build(x, y, rows, 0, max_depth, min_leaf, mtry, rng);
  }

  [[nodiscard]] double predict(const Eigen::Ref<const RowVector>& z) const {
    int at = 0;
    while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
      const TreeNode& nd = nodes_[static_cast<std::size_t>(at)];
      at = z(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(at)].value;
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  int build(const Matrix& x, const Vector& y, std::vector<Index>& rows, int depth, int max_depth, int min_leaf,
            int mtry, std::mt19937_64& rng) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    for (Index r : rows) sum += y(r);
    const double n = static_cast<double>(rows.size());
    nodes_[static_cast<std::size_t>(id)].value = sum / n;
    if (depth >= max_depth || rows.size() < static_cast<std::size_t>(2 * min_leaf)) return id;

    const int d = static_cast<int>(x.cols());
    std::vector<int> features(static_cast<std::size_t>(d));
    std::iota(features.begin(), features.end(), 0);
    std::shuffle(features.begin(), features.end(), rng);
    features.resize(static_cast<std::size_t>(std::min(mtry, d)));

    double best_gain = 1e-12 * std::max(1.0, n);
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, double>> sorted(rows.size());
    for (int f : features) {
      for (std::size_t i = 0; i < rows.size(); ++i) sorted[i] = {x(rows[i], f), y(rows[i])};
      std::sort(sorted.begin(), sorted.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0.0;
      const double base = sum * sum / n;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        left_sum += sorted[i].second;
        const std::size_t nl = i + 1, nr = sorted.size() - nl;
        if (nl < static_cast<std::size_t>(min_leaf) || nr < static_cast<std::size_t>(min_leaf)) continue;
        if (sorted[i].first == sorted[i + 1].first) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(nl) +
                            right_sum * right_sum / static_cast<double>(nr) - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (sorted[i].first + sorted[i + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<Index> left, right;
    for (Index r : rows) (x(r, best_feature) <= best_threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(x, y, left, depth + 1, max_depth, min_leaf, mtry, rng);
    const int r = build(x, y, right, depth + 1, max_depth, min_leaf, mtry, rng);
    TreeNode& nd = nodes_[static_cast<std::size_t>(id)];
    nd.feature = best_feature;
    nd.threshold = best_threshold;
    nd.left = l;
    nd.right = r;
    return id;
  }

  std::vector<TreeNode> nodes_;
};

}  // namespace detail

// Bagged regression trees on bootstrap resamples.
struct ForestModel {
  std::vector<detail::RegressionTree> trees;
  Index dim = 0;

  [[nodiscard]] Vector predict(const Matrix& z) const {
    Vector out = Vector::Zero(z.rows());
    for (Index i = 0; i < z.rows(); ++i) {
      double s = 0.0;
      for (const auto& t : trees) s += t.predict(z.row(i));
      out(i) = s / static_cast<double>(trees.size());
    }
    return out;
  }
};

class FittedRegressor {
 public:
  FittedRegressor() = default;
  explicit FittedRegressor(KernelRidgeModel m, Index dim) : model_(std::move(m)), dim_(dim) {}
  explicit FittedRegressor(ForestModel m, Index dim) : model_(std::move(m)), dim_(dim) {}

  [[nodiscard]] Vector predict(const Matrix& z) const {
    if (z.cols() != dim_)
      fail_validation("FittedRegressor::predict", "input dimension does not match the training data",
                      {{"expected", to_text(dim_)}, {"got", to_text(z.cols())}});
    if (!z.allFinite()) fail_validation("FittedRegressor::predict", "non-finite input");
    return std::visit([&](const auto& m) { return m.predict(z); }, model_);
  }

  [[nodiscard]] const KernelRidgeModel* kernel_ridge() const { return std::get_if<KernelRidgeModel>(&model_); }
  [[nodiscard]] const ForestModel* forest() const { return std::get_if<ForestModel>(&model_); }
  [[nodiscard]] Index dim() const { return dim_; }

 private:
  std::variant<KernelRidgeModel, ForestModel> model_;
  Index dim_ = 0;
};

namespace detail {

constexpr Index kMaxKernelAtoms = 6000;

inline KernelRidgeModel fit_kernel_ridge(const Matrix& z, const Vector& y, const KernelSpec& kernel,
                                         double ridge) {
  KernelRidgeModel m;
  m.kernel = kernel;
  m.ridge = ridge;
  m.center = z.colwise().mean();
  m.y_mean = y.mean();
  Matrix zc = z.rowwise() - m.center;
  Atoms atoms = Atoms::from_rows(zc);
  if (atoms.size() > kMaxKernelAtoms)
    fail_validation("fit_regressor", "too many distinct inputs for kernel ridge; use the tree ensemble",
                    {{"distinct_inputs", to_text(atoms.size())}, {"cap", to_text(kMaxKernelAtoms)}});
  Vector sums = atoms.sum(y.array() - m.y_mean);
  Vector sq = atoms.counts.cwiseSqrt();
  Matrix K = gram(kernel, atoms.points);
  Matrix Kt = sq.asDiagonal() * K * sq.asDiagonal();
  Vector rhs = sums.cwiseQuotient(sq);
  Vector g = regularized_solve(Kt, ridge, rhs);
  m.coefficients = sq.cwiseProduct(g);
  m.anchors = std::move(atoms.points);
  return m;
}

inline ForestModel fit_forest(const Matrix& z, const Vector& y, const RegressorSpec& spec) {
  ForestModel f;
  f.dim = z.cols();
  const int d = static_cast<int>(z.cols());
  const int mtry = spec.mtry > 0 ? spec.mtry : std::max(1, d / 3);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<Index> pick(0, z.rows() - 1);
  f.trees.resize(static_cast<std::size_t>(spec.trees));
  for (auto& t : f.trees) {
    std::vector<Index> rows(static_cast<std::size_t>(z.rows()));
    for (auto& r : rows) r = pick(rng);
    t.fit(z, y, std::move(rows), spec.max_depth, spec.min_leaf, mtry, rng);
  }
  return f;
}

}  // namespace detail

inline FittedRegressor fit_regressor(const Matrix& inputs, const Vector& targets, const RegressorSpec& spec) {
  spec.validate();
  if (inputs.rows() != targets.size())
    fail_validation("fit_regressor", "inputs and targets differ in length");
  if (inputs.rows() < 1) fail_validation("fit_regressor", "no training rows");
  if (!inputs.allFinite() || !targets.allFinite()) fail_validation("fit_regressor", "non-finite training data");
  if (spec.method == RegressorMethod::tree_ensemble)
    return FittedRegressor(detail::fit_forest(inputs, targets, spec), inputs.cols());

  KernelSpec kernel = spec.kernel ? *spec.kernel
                      : inputs.rows() >= 2 ? default_gaussian_kernel(inputs)
                                           : KernelSpec::gaussian(1.0);
  kernel.check_dim(inputs.cols());
  if (spec.ridge) return FittedRegressor(detail::fit_kernel_ridge(inputs, targets, kernel, *spec.ridge), inputs.cols());

  double ridge = spec.ridge_grid.front();
  if (spec.ridge_grid.size() > 1 && inputs.rows() >= 20) {
    std::vector<Index> perm(static_cast<std::size_t>(inputs.rows()));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(spec.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t nv = perm.size() / 4;
    std::vector<Index> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nv));
    std::vector<Index> tr(perm.begin() + static_cast<std::ptrdiff_t>(nv), perm.end());
    Matrix zt = select_rows(inputs, tr), zv = select_rows(inputs, val);
    Vector yt = select_rows(targets, tr), yv = select_rows(targets, val);
    double best = std::numeric_limits<double>::infinity();
    for (double r : spec.ridge_grid) {
      double mse;
      try {
        mse = (detail::fit_kernel_ridge(zt, yt, kernel, r).predict(zv) - yv).squaredNorm();
      } catch (const Error&) {
        continue;
      }
      if (mse < best) {
        best = mse;
        ridge = r;
      }
    }
  }
  return FittedRegressor(detail::fit_kernel_ridge(inputs, targets, kernel, ridge), inputs.cols());
}

struct NadarayaWeights {
  Vector weights;
  bool fallback = false;  // every kernel value underflowed; weights are uniform
};

inline NadarayaWeights nadaraya_weights(const KernelSpec& kernel, const Matrix& anchors,
                                        const Eigen::Ref<const RowVector>& query) {
  if (anchors.rows() < 1) fail_validation("nadaraya_weights", "no anchors");
  if (anchors.cols() != query.size()) fail_validation("nadaraya_weights", "dimension mismatch");
  NadarayaWeights out;
  out.weights = gram(kernel, anchors, Matrix(query));
  const double s = out.weights.sum();
  if (!(s > 0.0) || !std::isfinite(s)) {
    out.weights = Vector::Constant(anchors.rows(), 1.0 / static_cast<double>(anchors.rows()));
    out.fallback = true;
    return out;
  }
  out.weights /= s;
  return out;
}

// Smoothing kernel for Nadaraya weights: Gaussian on standardized
// coordinates with a Scott-type bandwidth 1.06 n^(-1/(d+4)).
inline KernelSpec nadaraya_default_kernel(const Matrix& anchors) {
  const double n = static_cast<double>(std::max<Index>(anchors.rows(), 1));
  const double d = static_cast<double>(anchors.cols());
  return KernelSpec::gaussian(1.06 * std::pow(n, -1.0 / (d + 4.0)), column_scales(anchors));
}

}  // namespace medbalance

#endif  // MEDBALANCE_REGRESS_HPP
