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

#ifndef MEDBALANCE_SUITES_HPP
#define MEDBALANCE_SUITES_HPP

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "medbalance/multi.hpp"
#include "medbalance/parallel.hpp"
#include "medbalance/report.hpp"
#include "medbalance/simlab.hpp"
#include "medbalance/single.hpp"

namespace medbalance {

struct SuiteOptions {
  std::vector<Index> n;  // empty means the suite default
  int reps = 0;          // 0 means the suite default
  std::uint64_t seed = 2026;
  int folds = 4;
  double ci_level = 0.95;
  BalancingConfig balancing;
  MultiBalancingConfig multi;
  RegressorSpec regressor;
  unsigned threads = 0;
};

struct SuiteResult {
  std::string suite;
  ReplicationTable table;
  nlohmann::json summary = nlohmann::json::object();
  bool passed = true;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"table1", "table2", "table3", "oracle"};
  return names;
}

// Replications of an estimator against an enumerated truth. within_3se counts
// replications with |estimate - truth| <= 3 sigma_hat / sqrt(n).
struct OracleCheck {
  ReplicationRow row;
  double within_3se = 0.0;
  std::vector<double> estimates;
};

template <class Estimate>
OracleCheck oracle_check(const std::string& name, Index n, int reps, double truth, unsigned threads,
                         Estimate&& estimate) {
  std::vector<EstimateReport> per(static_cast<std::size_t>(reps));
  parallel_for(
      static_cast<std::size_t>(reps), [&](std::size_t r) { per[r] = estimate(r); }, threads);
  OracleCheck c;
  std::vector<std::pair<double, double>> ci;
  int hit = 0;
  for (const auto& rep : per) {
    c.estimates.push_back(rep.estimate);
    ci.emplace_back(rep.ci_lower, rep.ci_upper);
    if (std::abs(rep.estimate - truth) <= 3.0 * rep.sigma_hat / std::sqrt(static_cast<double>(n))) ++hit;
  }
  c.row = summarize_replications(name, n, c.estimates, truth, &ci);
  c.within_3se = static_cast<double>(hit) / static_cast<double>(reps);
  return c;
}

inline OracleCheck oracle_single(Index n, int reps, const SuiteOptions& o) {
  const DiscreteSingleDgp g(discrete_single_default());
  return oracle_check("single-psi", n, reps, g.psi0(), o.threads, [&](std::size_t r) {
    const Dataset d = g.sample(n, mix_seed(o.seed, r));
    return estimate_psi_2s(d, o.folds, o.balancing, o.regressor, o.ci_level, mix_seed(o.seed ^ 0x5bd1e995ull, r));
  });
}

// Block j (0-based) of the two-mediator discrete design, optionally with a
// mediator that transmits nothing.
inline OracleCheck oracle_multi(Index n, int reps, int j, bool null_m1, const SuiteOptions& o) {
  const DiscreteMultiDgp g(discrete_multi_default(null_m1));
  const std::string name = std::string(null_m1 ? "multi-null-eie-m" : "multi-eie-m") + std::to_string(j + 1);
  return oracle_check(name, n, reps, g.enumerated().eie[j], o.threads, [&](std::size_t r) {
    const MultiDataset d = g.sample(n, mix_seed(o.seed, r));
    return estimate_eie(d, j, o.folds, o.multi, o.regressor, o.ci_level, mix_seed(o.seed ^ 0x5bd1e995ull, r));
  });
}

// table1: two-stage, naive and density-based estimators on the continuous
// benchmark design; table2: two-stage coverage; table3: the five
// nuisance-misspecification scenarios; oracle: enumerable designs.
inline SuiteResult run_suite(const std::string& name, SuiteOptions o) {
  SuiteResult res;
  res.suite = name;
  const PaperDgp paper;
  auto ns = [&](std::vector<Index> def) { return o.n.empty() ? def : o.n; };
  if (name == "table1" || name == "table2") {
    const bool t1 = name == "table1";
    const int reps = o.reps > 0 ? o.reps : 100;
    for (Index n : ns(t1 ? std::vector<Index>{1000} : std::vector<Index>{1000, 2000, 4000})) {
      const ReplicationResult rr = run_replications(paper, n, reps, mix_seed(o.seed, static_cast<std::uint64_t>(n)),
                                                    paper_estimator_suite(o.balancing, o.regressor, t1, o.folds, o.ci_level),
                                                    paper.psi0(), o.threads);
      for (const auto& row : rr.table.rows)
        if (t1 || row.estimator == "two-stage") res.table.rows.push_back(row);
    }
    res.summary["truth"] = paper.psi0();
  } else if (name == "table3") {
    const int reps = o.reps > 0 ? o.reps : 100;
    for (Index n : ns({2000})) {
      const ReplicationTable t = robustness_grid(paper, all_scenarios(), n, reps, o.balancing, o.regressor,
                                                 mix_seed(o.seed, static_cast<std::uint64_t>(n)), o.folds, o.threads,
                                                 o.ci_level);
      res.table.rows.insert(res.table.rows.end(), t.rows.begin(), t.rows.end());
    }
    res.summary["truth"] = paper.psi0();
  } else if (name == "oracle") {
    const int reps = o.reps > 0 ? o.reps : 50;
    nlohmann::json checks = nlohmann::json::array();
    auto add = [&](const OracleCheck& c, bool pass, const std::string& rule) {
      res.table.rows.push_back(c.row);
      checks.push_back({{"check", c.row.estimator}, {"n", c.row.n}, {"within_3se", c.within_3se},
                        {"coverage", c.row.coverage ? nlohmann::json(*c.row.coverage) : nlohmann::json(nullptr)},
                        {"rule", rule}, {"pass", pass}});
      res.passed = res.passed && pass;
    };
    for (Index n : ns({2000})) {
      const OracleCheck s = oracle_single(n, reps, o);
      add(s, s.within_3se >= 0.9, "within 3 se of the enumerated value in >= 90% of seeds");
      const OracleCheck m = oracle_multi(n, reps, 0, false, o);
      add(m, m.within_3se >= 0.9, "within 3 se of the enumerated value in >= 90% of seeds");
      const OracleCheck z = oracle_multi(n, reps, 0, true, o);
      add(z, z.row.coverage && *z.row.coverage >= 0.9, "confidence interval covers 0 in >= 90% of seeds");
    }
    res.summary["checks"] = checks;
  } else {
    std::string list;
    for (const auto& s : suite_names()) list += (list.empty() ? "" : ", ") + s;
    fail_validation("run_suite", "unknown suite", {{"suite", name}, {"available", list}});
  }
  res.summary["suite"] = name;
  res.summary["passed"] = res.passed;
  res.summary["table"] = res.table.to_json();
  return res;
}

}  // namespace medbalance

#endif  // MEDBALANCE_SUITES_HPP
