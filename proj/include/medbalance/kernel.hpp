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

#ifndef MEDBALANCE_KERNEL_HPP
#define MEDBALANCE_KERNEL_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "medbalance/error.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

enum class KernelFamily { gaussian_rbf, linear, polynomial };

inline std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::gaussian_rbf: return "gaussian_rbf";
    case KernelFamily::linear: return "linear";
    case KernelFamily::polynomial: return "polynomial";
  }
  return "unknown";
}

// Coordinates are divided by length_scales (when present) before the
// family's formula is applied:
//   gaussian_rbf  exp(-|x - y|^2 / (2 h^2))
//   linear        <x, y>
//   polynomial    (<x, y> + 1)^degree
struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian_rbf;
  double bandwidth = 1.0;
  int degree = 2;
  std::optional<Vector> length_scales;

  static KernelSpec gaussian(double h, std::optional<Vector> scales = std::nullopt) {
    KernelSpec k;
    k.family = KernelFamily::gaussian_rbf;
    k.bandwidth = h;
    k.length_scales = std::move(scales);
    return k;
  }
  static KernelSpec linear() {
    KernelSpec k;
    k.family = KernelFamily::linear;
    return k;
  }
  static KernelSpec polynomial(int degree) {
    KernelSpec k;
    k.family = KernelFamily::polynomial;
    k.degree = degree;
    return k;
  }

  void validate() const {
    if (family == KernelFamily::gaussian_rbf && !(bandwidth > 0.0 && std::isfinite(bandwidth)))
      fail_validation("KernelSpec", "bandwidth must be positive", {{"bandwidth", to_text(bandwidth)}});
    if (family == KernelFamily::polynomial && degree < 1)
      fail_validation("KernelSpec", "polynomial degree must be >= 1");
    if (length_scales) {
      for (Index i = 0; i < length_scales->size(); ++i)
        if (!((*length_scales)(i) > 0.0))
          fail_validation("KernelSpec", "length scales must be positive");
    }
  }

  void check_dim(Index d) const {
    if (length_scales && length_scales->size() != d)
      fail_validation("KernelSpec", "length_scales size does not match data dimension",
                      {{"expected", to_text(length_scales->size())}, {"got", to_text(d)}});
  }

  // Restriction to a subset of coordinates; for the Gaussian family the
  // kernel on the full vector is the product of the restricted kernels.
  [[nodiscard]] KernelSpec restricted(const std::vector<Index>& dims) const {
    KernelSpec k = *this;
    if (length_scales) {
      Vector s(static_cast<Index>(dims.size()));
      for (std::size_t i = 0; i < dims.size(); ++i) s(static_cast<Index>(i)) = (*length_scales)(dims[i]);
      k.length_scales = s;
    }
    return k;
  }

  template <class A, class B>
  [[nodiscard]] double operator()(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) const {
    const Index d = x.size();
    switch (family) {
      case KernelFamily::gaussian_rbf: {
        double s = 0.0;
        for (Index k = 0; k < d; ++k) {
          double diff = x(k) - y(k);
          if (length_scales) diff /= (*length_scales)(k);
          s += diff * diff;
        }
        return std::exp(-s / (2.0 * bandwidth * bandwidth));
      }
      case KernelFamily::linear:
      case KernelFamily::polynomial: {
        double s = 0.0;
        for (Index k = 0; k < d; ++k) {
          double p = x(k) * y(k);
          if (length_scales) p /= (*length_scales)(k) * (*length_scales)(k);
          s += p;
        }
        return family == KernelFamily::linear ? s : std::pow(s + 1.0, degree);
      }
    }
    return 0.0;
  }
};

namespace detail {

inline void check_points(const Matrix& p, const char* where) {
  if (!p.allFinite()) fail_validation(where, "input contains non-finite values");
}

}  // namespace detail

// K[i, j] = k(rows_i, cols_j).
inline Matrix gram(const KernelSpec& spec, const Matrix& rows, const Matrix& cols) {
  spec.validate();
  if (rows.cols() != cols.cols())
    fail_validation("gram", "row and column point sets differ in dimension",
                    {{"rows_dim", to_text(rows.cols())}, {"cols_dim", to_text(cols.cols())}});
  spec.check_dim(rows.cols());
  detail::check_points(rows, "gram");
  detail::check_points(cols, "gram");
  const Index n = rows.rows(), m = cols.rows(), d = rows.cols();
  Matrix K(n, m);
  if (spec.family == KernelFamily::gaussian_rbf) {
    Matrix r = rows, c = cols;
    if (spec.length_scales) {
      for (Index k = 0; k < d; ++k) {
        r.col(k) /= (*spec.length_scales)(k);
        c.col(k) /= (*spec.length_scales)(k);
      }
    }
    const double scale = -1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
    // Column-major loops over explicit differences keep K symmetric and its
    // diagonal exactly one when rows and cols coincide.
    Matrix ct = c.transpose();
    Matrix rt = r.transpose();
    for (Index j = 0; j < m; ++j) {
      for (Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (Index k = 0; k < d; ++k) {
          const double diff = rt(k, i) - ct(k, j);
          s += diff * diff;
        }
        K(i, j) = std::exp(s * scale);
      }
    }
    return K;
  }
  Matrix r = rows, c = cols;
  if (spec.length_scales) {
    for (Index k = 0; k < d; ++k) {
      r.col(k) /= (*spec.length_scales)(k);
      c.col(k) /= (*spec.length_scales)(k);
    }
  }
  K.noalias() = r * c.transpose();
  if (spec.family == KernelFamily::polynomial) {
    K = K.unaryExpr([&](double v) { return std::pow(v + 1.0, spec.degree); });
  }
  return K;
}

inline Matrix gram(const KernelSpec& spec, const Matrix& points) { return gram(spec, points, points); }

// Solves (K + ridge I) x = rhs for symmetric PSD K.
inline Matrix regularized_solve(const Matrix& K, double ridge, const Matrix& rhs) {
  if (K.rows() != K.cols()) fail_validation("regularized_solve", "matrix must be square");
  if (rhs.rows() != K.rows()) fail_validation("regularized_solve", "right-hand side has wrong length");
  if (!(ridge >= 0.0)) fail_validation("regularized_solve", "ridge must be non-negative");
  if (!K.allFinite() || !rhs.allFinite()) fail_validation("regularized_solve", "non-finite input");
  Matrix A = K;
  A.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() == Eigen::Success) {
    Matrix x = llt.solve(rhs);
    if (x.allFinite()) return x;
  }
  Eigen::LDLT<Matrix> ldlt(A);
  const Vector d = ldlt.vectorD().cwiseAbs();
  const double dmax = d.size() ? d.maxCoeff() : 0.0;
  if (ldlt.info() != Eigen::Success || d.size() == 0 || d.minCoeff() <= 1e-14 * std::max(dmax, 1e-300))
    fail_numerical("regularized_solve", "system is numerically singular; increase the ridge",
                   {{"ridge", to_text(ridge)}});
  return ldlt.solve(rhs);
}

// Minimum-norm least-squares solution through a truncated SVD:
// singular values below rel_tol * sigma_max are discarded.
inline Vector pseudo_inverse_solve(const Matrix& A, const Vector& rhs, double rel_tol = 1e-10) {
  if (A.rows() != rhs.rows()) fail_validation("pseudo_inverse_solve", "dimension mismatch");
  if (!A.allFinite() || !rhs.allFinite()) fail_validation("pseudo_inverse_solve", "non-finite input");
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  Vector ut = svd.matrixU().transpose() * rhs;
  for (Index i = 0; i < s.size(); ++i) ut(i) = s(i) > rel_tol * smax && s(i) > 0.0 ? ut(i) / s(i) : 0.0;
  return svd.matrixV() * ut;
}

// Same contract for symmetric A, via its eigendecomposition.
inline Vector pseudo_inverse_solve_symmetric(const Matrix& A, const Vector& rhs, double rel_tol = 1e-10) {
  if (A.rows() != A.cols() || A.rows() != rhs.rows())
    fail_validation("pseudo_inverse_solve_symmetric", "dimension mismatch");
  if (!A.allFinite() || !rhs.allFinite())
    fail_validation("pseudo_inverse_solve_symmetric", "non-finite input");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  if (eig.info() != Eigen::Success) fail_numerical("pseudo_inverse_solve_symmetric", "eigensolver failed");
  const Vector& ev = eig.eigenvalues();
  const double emax = ev.cwiseAbs().maxCoeff();
  Vector c = eig.eigenvectors().transpose() * rhs;
  for (Index i = 0; i < ev.size(); ++i)
    c(i) = std::abs(ev(i)) > rel_tol * emax && ev(i) != 0.0 ? c(i) / ev(i) : 0.0;
  return eig.eigenvectors() * c;
}

// Median of pairwise Euclidean distances, on at most max_points rows drawn
// with a fixed seed. When ties at zero dominate (discrete data) the median
// of the strictly positive distances is used instead.
inline double median_heuristic_bandwidth(const Matrix& points, Index max_points = 2000,
                                         std::uint64_t seed = 20260101) {
  detail::check_points(points, "median_heuristic_bandwidth");
  if (points.rows() < 2) fail_validation("median_heuristic_bandwidth", "need at least two points");
  std::vector<Index> idx(static_cast<std::size_t>(points.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (points.rows() > max_points) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_points));
  }
  std::vector<double> dist;
  dist.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b)
      dist.push_back((points.row(idx[a]) - points.row(idx[b])).norm());
  double med = median_of(dist);
  if (med > 0.0) return med;
  std::vector<double> positive;
  for (double d : dist)
    if (d > 0.0) positive.push_back(d);
  if (positive.empty())
    fail_validation("median_heuristic_bandwidth", "all points are identical; bandwidth undefined");
  return median_of(positive);
}

// Per-column standard deviations, with 1 substituted for constant columns.
inline Vector column_scales(const Matrix& points) {
  Vector s(points.cols());
  for (Index k = 0; k < points.cols(); ++k) {
    const double m = points.col(k).mean();
    const double v = (points.col(k).array() - m).square().sum() / std::max<Index>(points.rows() - 1, 1);
    s(k) = v > 1e-24 ? std::sqrt(v) : 1.0;
  }
  return s;
}

// Default kernel for a point cloud: Gaussian on standardized coordinates
// with the median-heuristic bandwidth.
inline KernelSpec default_gaussian_kernel(const Matrix& points) {
  Vector s = column_scales(points);
  Matrix z = points;
  for (Index k = 0; k < z.cols(); ++k) z.col(k) /= s(k);
  double h = points.rows() >= 2 ? median_heuristic_bandwidth(z) : 1.0;
  return KernelSpec::gaussian(h, s);
}

// Identical rows collapsed into atoms with multiplicities. Empirical sums
// over units equal count-weighted sums over atoms, so every fit that only
// touches the data through such sums can run on the atoms instead.
struct Atoms {
  Matrix points;
  Vector counts;
  std::vector<Index> atom_of;

  static Atoms from_rows(const Matrix& rows) {
    Atoms a;
    std::map<std::vector<double>, Index> seen;
    std::vector<Index> first;
    std::vector<double> cnt;
    a.atom_of.resize(static_cast<std::size_t>(rows.rows()));
    std::vector<double> key(static_cast<std::size_t>(rows.cols()));
    for (Index i = 0; i < rows.rows(); ++i) {
      for (Index k = 0; k < rows.cols(); ++k) key[static_cast<std::size_t>(k)] = rows(i, k);
      auto [it, inserted] = seen.emplace(key, static_cast<Index>(first.size()));
      if (inserted) {
        first.push_back(i);
        cnt.push_back(0.0);
      }
      cnt[static_cast<std::size_t>(it->second)] += 1.0;
      a.atom_of[static_cast<std::size_t>(i)] = it->second;
    }
    a.points = select_rows(rows, first);
    a.counts = Eigen::Map<Vector>(cnt.data(), static_cast<Index>(cnt.size()));
    return a;
  }

  [[nodiscard]] Index size() const { return points.rows(); }

  [[nodiscard]] Vector sum(const Vector& unit_values) const {
    Vector s = Vector::Zero(size());
    for (std::size_t i = 0; i < atom_of.size(); ++i) s(atom_of[i]) += unit_values(static_cast<Index>(i));
    return s;
  }
};

}  // namespace medbalance

#endif  // MEDBALANCE_KERNEL_HPP
