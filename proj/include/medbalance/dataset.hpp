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

#ifndef MEDBALANCE_DATASET_HPP
#define MEDBALANCE_DATASET_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "medbalance/error.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

enum class OutcomeType { continuous, binary };

// One row per unit; M holds every mediator column.
struct Dataset {
  Matrix X;
  Vector A;
  Matrix M;
  Vector Y;
  OutcomeType outcome_type = OutcomeType::continuous;

  [[nodiscard]] Index n() const { return A.size(); }
  [[nodiscard]] Matrix mx() const { return hcat(M, X); }

  [[nodiscard]] Dataset subset(const std::vector<Index>& rows) const {
    return Dataset{select_rows(X, rows), select_rows(A, rows), select_rows(M, rows), select_rows(Y, rows),
                   outcome_type};
  }

  void validate(const std::string& where) const {
    const Index n = A.size();
    if (X.rows() != n || M.rows() != n || Y.size() != n)
      fail_validation(where, "columns differ in length",
                      {{"X", to_text(X.rows())}, {"A", to_text(n)}, {"M", to_text(M.rows())}, {"Y", to_text(Y.size())}});
    if (n == 0) fail_validation(where, "empty dataset");
    if (M.cols() == 0) fail_validation(where, "no mediator columns");
    if (!X.allFinite() || !M.allFinite() || !Y.allFinite() || !A.allFinite())
      fail_validation(where, "dataset contains non-finite values");
    for (Index i = 0; i < n; ++i)
      if (A(i) != 0.0 && A(i) != 1.0)
        fail_validation(where, "treatment must be coded 0/1", {{"row", to_text(i)}, {"value", to_text(A(i))}});
    if (outcome_type == OutcomeType::binary)
      for (Index i = 0; i < n; ++i)
        if (Y(i) != 0.0 && Y(i) != 1.0) fail_validation(where, "binary outcome must be coded 0/1", {{"row", to_text(i)}});
  }
};

// Mediator columns are grouped into k blocks; block j is the j-th mediator
// (possibly multivariate). Blocks are 0-based in this API.
struct MultiDataset {
  Matrix X;
  Vector A;
  Matrix M;
  std::vector<std::vector<Index>> blocks;
  Vector Y;
  OutcomeType outcome_type = OutcomeType::continuous;

  [[nodiscard]] Index n() const { return A.size(); }
  [[nodiscard]] int k() const { return static_cast<int>(blocks.size()); }

  [[nodiscard]] std::vector<Index> other_columns(int j) const {
    std::vector<Index> cols;
    for (int b = 0; b < k(); ++b)
      if (b != j) cols.insert(cols.end(), blocks[static_cast<std::size_t>(b)].begin(), blocks[static_cast<std::size_t>(b)].end());
    return cols;
  }
  [[nodiscard]] Matrix mj(int j) const { return select_cols(M, blocks.at(static_cast<std::size_t>(j))); }
  [[nodiscard]] Matrix m_minus(int j) const { return select_cols(M, other_columns(j)); }

  [[nodiscard]] Dataset composite() const { return Dataset{X, A, M, Y, outcome_type}; }

  [[nodiscard]] MultiDataset subset(const std::vector<Index>& rows) const {
    return MultiDataset{select_rows(X, rows), select_rows(A, rows), select_rows(M, rows), blocks,
                        select_rows(Y, rows), outcome_type};
  }

  void validate(const std::string& where) const {
    composite().validate(where);
    if (k() < 2) fail_validation(where, "need at least two mediator blocks");
    std::vector<int> seen(static_cast<std::size_t>(M.cols()), 0);
    for (const auto& b : blocks) {
      if (b.empty()) fail_validation(where, "empty mediator block");
      for (Index c : b) {
        if (c < 0 || c >= M.cols()) fail_validation(where, "mediator block refers to a missing column");
        seen[static_cast<std::size_t>(c)]++;
      }
    }
    for (int s : seen)
      if (s != 1) fail_validation(where, "mediator blocks must partition the mediator columns");
  }
};

// Fold labels 0..L-1; sizes differ by at most one and every training
// complement contains both arms.
struct FoldAssignment {
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<int> fold_of;

  [[nodiscard]] std::vector<Index> members(int l) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == l) out.push_back(static_cast<Index>(i));
    return out;
  }
  [[nodiscard]] std::vector<Index> complement(int l) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != l) out.push_back(static_cast<Index>(i));
    return out;
  }
};

inline FoldAssignment make_folds(Index n, int L, const Vector& A, std::uint64_t seed) {
  if (L < 2) fail_validation("make_folds", "need at least two folds", {{"folds", to_text(L)}});
  if (n < L) fail_validation("make_folds", "fewer units than folds", {{"n", to_text(n)}, {"folds", to_text(L)}});
  if (A.size() != n) fail_validation("make_folds", "treatment vector has wrong length");
  FoldAssignment f;
  f.folds = L;
  f.seed = seed;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    f.fold_of.assign(static_cast<std::size_t>(n), 0);
    for (std::size_t p = 0; p < perm.size(); ++p) f.fold_of[static_cast<std::size_t>(perm[p])] = static_cast<int>(p % static_cast<std::size_t>(L));
    bool ok = true;
    for (int l = 0; l < L && ok; ++l) {
      double treated = 0, total = 0;
      for (Index i = 0; i < n; ++i)
        if (f.fold_of[static_cast<std::size_t>(i)] != l) {
          treated += A(i);
          total += 1;
        }
      ok = treated > 0 && treated < total;
    }
    if (ok) return f;
  }
  fail_validation("make_folds", "could not find folds whose training parts contain both arms");
}

}  // namespace medbalance

#endif  // MEDBALANCE_DATASET_HPP
