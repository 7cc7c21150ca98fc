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

#ifndef MEDBALANCE_CONFIG_HPP
#define MEDBALANCE_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "medbalance/balance.hpp"
#include "medbalance/balance_multi.hpp"
#include "medbalance/error.hpp"
#include "medbalance/io.hpp"
#include "medbalance/kernel.hpp"
#include "medbalance/regress.hpp"

namespace medbalance {

// Run-level settings shared by the command-line front end. Every field has
// a JSON key of the same name; unknown keys are rejected.
struct RunConfig {
  int folds = 4;
  double ci_level = 0.95;
  std::uint64_t seed = 2026;
  bool complete_case = true;
  std::string estimator = "2s";  // 2s | naive | tts
  unsigned threads = 0;
  ColumnSchema schema;
  BalancingConfig balancing;
  MultiBalancingConfig multi;
  RegressorSpec regressor;

  void validate() const {
    if (folds < 2) fail_validation("RunConfig", "folds must be at least 2", {{"folds", to_text(folds)}});
    if (!(ci_level > 0.0 && ci_level < 1.0))
      fail_validation("RunConfig", "ci_level must lie in (0, 1)", {{"ci_level", to_text(ci_level)}});
    if (estimator != "2s" && estimator != "naive" && estimator != "tts")
      fail_validation("RunConfig", "unknown estimator; expected 2s, naive or tts", {{"estimator", estimator}});
    balancing.validate();
    multi.validate();
    regressor.validate();
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& o, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!o.is_object()) fail_validation("config", "expected an object", {{"key", where}});
  for (auto it = o.begin(); it != o.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) fail_validation("config", "unknown key", {{"key", where.empty() ? it.key() : where + "." + it.key()}});
  }
}

template <class T>
void take(const json& o, const char* key, T& out, const std::string& where) {
  if (!o.contains(key)) return;
  try {
    out = o.at(key).get<T>();
  } catch (const json::exception&) {
    fail_validation("config", "value has the wrong type", {{"key", where.empty() ? key : where + "." + key}});
  }
}

}  // namespace detail

inline nlohmann::json to_json(const KernelSpec& k) {
  nlohmann::json j{{"family", to_string(k.family)}};
  if (k.family == KernelFamily::gaussian_rbf) j["bandwidth"] = k.bandwidth;
  if (k.family == KernelFamily::polynomial) j["degree"] = k.degree;
  if (k.length_scales) j["length_scales"] = std::vector<double>(k.length_scales->data(), k.length_scales->data() + k.length_scales->size());
  return j;
}

inline KernelSpec kernel_from_json(const nlohmann::json& j, const std::string& where) {
  detail::check_keys(j, {"family", "bandwidth", "degree", "length_scales"}, where);
  std::string fam = "gaussian_rbf";
  detail::take(j, "family", fam, where);
  KernelSpec k;
  if (fam == "gaussian_rbf") {
    k.family = KernelFamily::gaussian_rbf;
  } else if (fam == "linear") {
    k.family = KernelFamily::linear;
  } else if (fam == "polynomial") {
    k.family = KernelFamily::polynomial;
  } else {
    fail_validation("config", "unknown kernel family", {{"key", where + ".family"}, {"value", fam}});
  }
  detail::take(j, "bandwidth", k.bandwidth, where);
  detail::take(j, "degree", k.degree, where);
  if (j.contains("length_scales")) {
    std::vector<double> v;
    detail::take(j, "length_scales", v, where);
    k.length_scales = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }
  k.validate();
  return k;
}

inline std::string to_string(NormalSolver s) {
  switch (s) {
    case NormalSolver::automatic: return "automatic";
    case NormalSolver::pseudo_inverse: return "pseudo_inverse";
    case NormalSolver::factored: return "factored";
  }
  return "unknown";
}

inline nlohmann::json to_json(const BalancingConfig& c) {
  auto opt = [](const std::optional<KernelSpec>& k) { return k ? to_json(*k) : nlohmann::json(nullptr); };
  return {{"pi_kernel", opt(c.pi_kernel)},
          {"h_kernel", opt(c.h_kernel)},
          {"lambda_pi", c.lambda_pi},
          {"lambda_h", c.lambda_h},
          {"trim_epsilon", c.trim_epsilon},
          {"tune", c.tune},
          {"lambda_grid", c.lambda_grid},
          {"validation_fraction", c.validation_fraction},
          {"solver", to_string(c.solver)},
          {"pinv_max_atoms", c.pinv_max_atoms},
          {"bandwidth_scale", c.bandwidth_scale},
          {"pinv_rel_tol", c.pinv_rel_tol},
          {"seed", c.seed}};
}

inline void merge_json(const nlohmann::json& j, BalancingConfig& c, const std::string& where) {
  detail::check_keys(j,
                     {"pi_kernel", "h_kernel", "lambda_pi", "lambda_h", "trim_epsilon", "tune", "lambda_grid",
                      "validation_fraction", "solver", "pinv_max_atoms", "bandwidth_scale", "pinv_rel_tol", "seed"},
                     where);
  for (const char* key : {"pi_kernel", "h_kernel"}) {
    if (!j.contains(key)) continue;
    auto& dst = std::string(key) == "pi_kernel" ? c.pi_kernel : c.h_kernel;
    if (j.at(key).is_null()) {
      dst.reset();
    } else {
      dst = kernel_from_json(j.at(key), where + "." + key);
    }
  }
  detail::take(j, "lambda_pi", c.lambda_pi, where);
  detail::take(j, "lambda_h", c.lambda_h, where);
  detail::take(j, "trim_epsilon", c.trim_epsilon, where);
  detail::take(j, "tune", c.tune, where);
  detail::take(j, "lambda_grid", c.lambda_grid, where);
  detail::take(j, "validation_fraction", c.validation_fraction, where);
  detail::take(j, "pinv_max_atoms", c.pinv_max_atoms, where);
  detail::take(j, "bandwidth_scale", c.bandwidth_scale, where);
  detail::take(j, "pinv_rel_tol", c.pinv_rel_tol, where);
  detail::take(j, "seed", c.seed, where);
  if (j.contains("solver")) {
    std::string s;
    detail::take(j, "solver", s, where);
    if (s == "automatic") {
      c.solver = NormalSolver::automatic;
    } else if (s == "pseudo_inverse") {
      c.solver = NormalSolver::pseudo_inverse;
    } else if (s == "factored") {
      c.solver = NormalSolver::factored;
    } else {
      fail_validation("config", "unknown solver", {{"key", where + ".solver"}, {"value", s}});
    }
  }
}

inline nlohmann::json to_json(const MultiBalancingConfig& c) {
  return {{"pi", to_json(c.pi)},
          {"rho", to_json(c.rho)},
          {"omega", to_json(c.omega)},
          {"cme_kernel", c.cme_kernel ? to_json(*c.cme_kernel) : nlohmann::json(nullptr)},
          {"lambda_cme", c.lambda_cme},
          {"trim_epsilon", c.trim_epsilon},
          {"delta_pi", c.delta_pi},
          {"max_units", c.max_units}};
}

inline void merge_json(const nlohmann::json& j, MultiBalancingConfig& c, const std::string& where) {
  detail::check_keys(j, {"pi", "rho", "omega", "cme_kernel", "lambda_cme", "trim_epsilon", "delta_pi", "max_units"},
                     where);
  if (j.contains("pi")) merge_json(j.at("pi"), c.pi, where + ".pi");
  if (j.contains("rho")) merge_json(j.at("rho"), c.rho, where + ".rho");
  if (j.contains("omega")) merge_json(j.at("omega"), c.omega, where + ".omega");
  if (j.contains("cme_kernel")) {
    if (j.at("cme_kernel").is_null()) {
      c.cme_kernel.reset();
    } else {
      c.cme_kernel = kernel_from_json(j.at("cme_kernel"), where + ".cme_kernel");
    }
  }
  detail::take(j, "lambda_cme", c.lambda_cme, where);
  detail::take(j, "trim_epsilon", c.trim_epsilon, where);
  detail::take(j, "delta_pi", c.delta_pi, where);
  detail::take(j, "max_units", c.max_units, where);
}

inline nlohmann::json to_json(const RegressorSpec& r) {
  nlohmann::json j{{"method", to_string(r.method)}, {"seed", r.seed}};
  if (r.method == RegressorMethod::kernel_ridge) {
    j["kernel"] = r.kernel ? to_json(*r.kernel) : nlohmann::json(nullptr);
    j["ridge"] = r.ridge ? nlohmann::json(*r.ridge) : nlohmann::json(nullptr);
    j["ridge_grid"] = r.ridge_grid;
  } else {
    j["trees"] = r.trees;
    j["max_depth"] = r.max_depth;
    j["min_leaf"] = r.min_leaf;
    j["mtry"] = r.mtry;
  }
  return j;
}

inline void merge_json(const nlohmann::json& j, RegressorSpec& r, const std::string& where) {
  detail::check_keys(j, {"method", "seed", "kernel", "ridge", "ridge_grid", "trees", "max_depth", "min_leaf", "mtry"},
                     where);
  if (j.contains("method")) {
    std::string m;
    detail::take(j, "method", m, where);
    if (m == "kernel-ridge") {
      r.method = RegressorMethod::kernel_ridge;
    } else if (m == "tree-ensemble") {
      r.method = RegressorMethod::tree_ensemble;
    } else {
      fail_validation("config", "unknown regressor method; expected kernel-ridge or tree-ensemble",
                      {{"key", where + ".method"}, {"value", m}});
    }
  }
  detail::take(j, "seed", r.seed, where);
  if (j.contains("kernel")) {
    if (j.at("kernel").is_null()) {
      r.kernel.reset();
    } else {
      r.kernel = kernel_from_json(j.at("kernel"), where + ".kernel");
    }
  }
  if (j.contains("ridge")) {
    if (j.at("ridge").is_null()) {
      r.ridge.reset();
    } else {
      double v = 0;
      detail::take(j, "ridge", v, where);
      r.ridge = v;
    }
  }
  detail::take(j, "ridge_grid", r.ridge_grid, where);
  detail::take(j, "trees", r.trees, where);
  detail::take(j, "max_depth", r.max_depth, where);
  detail::take(j, "min_leaf", r.min_leaf, where);
  detail::take(j, "mtry", r.mtry, where);
}

inline nlohmann::json to_json(const ColumnSchema& s) {
  return {{"covariates", s.covariates}, {"treatment", s.treatment}, {"mediators", s.mediators},
          {"blocks", s.blocks},         {"outcome", s.outcome},     {"outcome_type", to_string(s.outcome_type)}};
}

inline void merge_json(const nlohmann::json& j, ColumnSchema& s, const std::string& where) {
  detail::check_keys(j, {"covariates", "treatment", "mediators", "blocks", "outcome", "outcome_type"}, where);
  detail::take(j, "covariates", s.covariates, where);
  detail::take(j, "treatment", s.treatment, where);
  detail::take(j, "mediators", s.mediators, where);
  detail::take(j, "blocks", s.blocks, where);
  detail::take(j, "outcome", s.outcome, where);
  if (j.contains("outcome_type")) {
    std::string t;
    detail::take(j, "outcome_type", t, where);
    s.outcome_type = parse_outcome_type(t);
  }
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"folds", c.folds},
          {"ci_level", c.ci_level},
          {"seed", c.seed},
          {"complete_case", c.complete_case},
          {"estimator", c.estimator},
          {"threads", c.threads},
          {"schema", to_json(c.schema)},
          {"balancing", to_json(c.balancing)},
          {"multi", to_json(c.multi)},
          {"regressor", to_json(c.regressor)}};
}

inline void merge_json(const nlohmann::json& j, RunConfig& c) {
  detail::check_keys(j,
                     {"folds", "ci_level", "seed", "complete_case", "estimator", "threads", "schema", "balancing",
                      "multi", "regressor"},
                     "");
  detail::take(j, "folds", c.folds, "");
  detail::take(j, "ci_level", c.ci_level, "");
  detail::take(j, "seed", c.seed, "");
  detail::take(j, "complete_case", c.complete_case, "");
  detail::take(j, "estimator", c.estimator, "");
  detail::take(j, "threads", c.threads, "");
  if (j.contains("schema")) merge_json(j.at("schema"), c.schema, "schema");
  if (j.contains("balancing")) merge_json(j.at("balancing"), c.balancing, "balancing");
  if (j.contains("multi")) merge_json(j.at("multi"), c.multi, "multi");
  if (j.contains("regressor")) merge_json(j.at("regressor"), c.regressor, "regressor");
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_validation("load_run_config", "cannot open config file", {{"path", path}});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail_validation("load_run_config", "config is not valid JSON", {{"path", path}, {"parser", e.what()}});
  }
  RunConfig c;
  merge_json(j, c);
  return c;
}

}  // namespace medbalance

#endif  // MEDBALANCE_CONFIG_HPP
