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

#ifndef MEDBALANCE_REPORT_HPP
#define MEDBALANCE_REPORT_HPP

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

struct Diagnostics {
  double clip_rate = 0.0;
  std::vector<std::pair<std::string, double>> residuals;  // per fold and nuisance
  std::vector<std::string> warnings;
  Index nadaraya_fallbacks = 0;
};

struct EstimateReport {
  std::string estimator;
  std::string estimand;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_fold;
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
  double ci_level = 0.95;
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double ci_upper = std::numeric_limits<double>::quiet_NaN();
  Index n = 0;
  int folds = 0;
  std::optional<int> mediator_index;  // 1-based in reports
  std::optional<int> mediator_count;
  Diagnostics diagnostics;
  std::vector<std::string> flags;
  bool calibrated = true;
  Vector scores;  // per-observation scores, original row order
  nlohmann::json config;

  [[nodiscard]] bool has_flag(const std::string& f) const {
    for (const auto& s : flags)
      if (s == f) return true;
    return false;
  }
};

// JSON cannot carry inf / nan, so non-finite numbers become strings.
inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline nlohmann::json to_json(const EstimateReport& r) {
  nlohmann::json j;
  j["estimator"] = r.estimator;
  j["estimand"] = r.estimand;
  j["estimate"] = json_number(r.estimate);
  nlohmann::json folds = nlohmann::json::array();
  for (double v : r.per_fold) folds.push_back(json_number(v));
  j["per_fold_estimates"] = folds;
  j["sigma_hat"] = json_number(r.sigma_hat);
  j["ci"] = {{"level", r.ci_level}, {"lower", json_number(r.ci_lower)}, {"upper", json_number(r.ci_upper)}};
  j["n"] = r.n;
  j["folds"] = r.folds;
  if (r.mediator_index) j["mediator_index"] = *r.mediator_index;
  if (r.mediator_count) j["mediator_count"] = *r.mediator_count;
  j["calibrated"] = r.calibrated;
  j["flags"] = r.flags;
  nlohmann::json d;
  d["clip_rate"] = r.diagnostics.clip_rate;
  nlohmann::json res = nlohmann::json::array();
  for (const auto& [k, v] : r.diagnostics.residuals) res.push_back({{"name", k}, {"value", json_number(v)}});
  d["balancing_residuals"] = res;
  d["warnings"] = r.diagnostics.warnings;
  d["nadaraya_fallbacks"] = r.diagnostics.nadaraya_fallbacks;
  j["diagnostics"] = d;
  if (!r.config.is_null()) j["config"] = r.config;
  return j;
}

// Monte Carlo summary of one estimator at one sample size.
struct ReplicationRow {
  std::string estimator;
  Index n = 0;
  int reps = 0;
  double mean_bias = 0.0;
  double median_bias = 0.0;
  double rmse = 0.0;
  double sd = 0.0;
  std::optional<double> coverage;
  int nonfinite = 0;
};

// Non-finite estimates stay in every statistic, so a single blow-up shows
// up in the mean bias and RMSE exactly as it would in a naive tabulation.
inline ReplicationRow summarize_replications(const std::string& name, Index n, const std::vector<double>& estimates,
                                             double truth,
                                             const std::vector<std::pair<double, double>>* intervals = nullptr) {
  ReplicationRow row;
  row.estimator = name;
  row.n = n;
  row.reps = static_cast<int>(estimates.size());
  std::vector<double> bias;
  double sq = 0.0;
  for (double e : estimates) {
    bias.push_back(e - truth);
    sq += (e - truth) * (e - truth);
    if (!std::isfinite(e)) row.nonfinite++;
  }
  row.mean_bias = mean_of(bias);
  row.median_bias = median_of(bias);
  row.rmse = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(estimates.size(), 1)));
  row.sd = sd_of(estimates);
  if (intervals && !intervals->empty()) {
    int hit = 0;
    for (const auto& [lo, hi] : *intervals) hit += (lo <= truth && truth <= hi) ? 1 : 0;
    row.coverage = static_cast<double>(hit) / static_cast<double>(intervals->size());
  }
  return row;
}

struct ReplicationTable {
  std::vector<ReplicationRow> rows;

  [[nodiscard]] const ReplicationRow* find(const std::string& estimator, Index n = -1) const {
    for (const auto& r : rows)
      if (r.estimator == estimator && (n < 0 || r.n == n)) return &r;
    return nullptr;
  }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "estimator,n,reps,mean_bias,median_bias,rmse,sd,coverage,nonfinite\n";
    for (const auto& r : rows) {
      os << r.estimator << ',' << r.n << ',' << r.reps << ',' << r.mean_bias << ',' << r.median_bias << ','
         << r.rmse << ',' << r.sd << ',';
      if (r.coverage) os << *r.coverage;
      os << ',' << r.nonfinite << '\n';
    }
    return os.str();
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json o = {{"estimator", r.estimator},         {"n", r.n},
                          {"reps", r.reps},                   {"mean_bias", json_number(r.mean_bias)},
                          {"median_bias", json_number(r.median_bias)}, {"rmse", json_number(r.rmse)},
                          {"sd", json_number(r.sd)},          {"nonfinite", r.nonfinite}};
      o["coverage"] = r.coverage ? nlohmann::json(*r.coverage) : nlohmann::json(nullptr);
      j.push_back(o);
    }
    return j;
  }
};

}  // namespace medbalance

#endif  // MEDBALANCE_REPORT_HPP
