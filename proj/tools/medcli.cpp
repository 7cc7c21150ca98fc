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

// medcli: command-line front end for the medbalance estimators.
//
//   medcli estimate-single --data d.csv --covariates X1,X2 --treatment A --mediators M --outcome Y
//   medcli estimate-multi  --data d.csv ... --mediators M1,M2 --mediator-index 1 [--interaction]
//   medcli report-or       --data d.csv ... --outcome-type binary
//   medcli simulate        --suite table1 --n 1000 --reps 50 --out results/
//   medcli generate        --dgp paper --n 2000 --out d.csv
//
// Exit codes: 0 success, 2 validation error, 3 numerical failure, 1 other.
// Errors are written to stderr as one JSON object.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "medbalance/config.hpp"
#include "medbalance/io.hpp"
#include "medbalance/multi.hpp"
#include "medbalance/simlab.hpp"
#include "medbalance/single.hpp"
#include "medbalance/suites.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace medbalance;

namespace {

struct Flags {
  std::string config_path;
  std::string data_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  std::optional<double> ci_level;
  std::optional<unsigned> threads;
  std::optional<std::string> regressor;
  std::optional<std::string> estimator;
  std::optional<std::vector<std::string>> covariates;
  std::optional<std::string> treatment;
  std::optional<std::vector<std::string>> mediators;
  std::optional<std::string> blocks;
  std::optional<std::string> outcome;
  std::optional<std::string> outcome_type;
  bool no_complete_case = false;
  int mediator_index = 1;
  bool interaction = false;
  std::string suite;
  std::vector<long long> n;
  int reps = 0;
  std::string dgp = "paper";
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig() : load_run_config(f.config_path);
  if (f.seed) c.seed = *f.seed;
  if (f.folds) c.folds = *f.folds;
  if (f.ci_level) c.ci_level = *f.ci_level;
  if (f.threads) c.threads = *f.threads;
  if (f.estimator) c.estimator = *f.estimator;
  if (f.regressor) merge_json(json{{"method", *f.regressor}}, c.regressor, "regressor");
  if (f.covariates) c.schema.covariates = *f.covariates;
  if (f.treatment) c.schema.treatment = *f.treatment;
  if (f.mediators) c.schema.mediators = *f.mediators;
  if (f.outcome) c.schema.outcome = *f.outcome;
  if (f.outcome_type) c.schema.outcome_type = parse_outcome_type(*f.outcome_type);
  if (f.blocks) {
    // "M1;M2,M3" gives blocks {M1} and {M2, M3}.
    c.schema.blocks.clear();
    for (const auto& b : split(*f.blocks, ';')) c.schema.blocks.push_back(split(b, ','));
  }
  if (f.no_complete_case) c.complete_case = false;
  c.validate();
  return c;
}

void emit(const json& report, const Flags& f, const std::string& file) {
  const std::string text = report.dump(2);
  std::cout << text << '\n';
  if (f.out.empty()) return;
  fs::create_directories(f.out);
  std::ofstream(fs::path(f.out) / file) << text << '\n';
}

json data_block(const LoadedData& ld, const std::string& path) {
  return {{"path", path}, {"rows_read", ld.rows_read}, {"dropped", ld.dropped}, {"n", ld.data.n()}};
}

LoadedData load(const Flags& f, const RunConfig& c) {
  if (f.data_path.empty()) fail_validation("medcli", "--data is required");
  return load_csv(f.data_path, c.schema, c.complete_case);
}

int cmd_estimate_single(const Flags& f) {
  const RunConfig c = effective_config(f);
  const LoadedData ld = load(f, c);
  EstimateReport r;
  if (c.estimator == "2s") {
    r = estimate_psi_2s(ld.data, c.folds, c.balancing, c.regressor, c.ci_level, c.seed);
  } else if (c.estimator == "naive") {
    r = estimate_naive(ld.data, c.folds, c.regressor, c.ci_level, c.seed);
  } else {
    r = estimate_tts(ld.data, c.folds, c.regressor, c.ci_level, c.seed);
  }
  json j = to_json(r);
  j["data"] = data_block(ld, f.data_path);
  j["config"] = to_json(c);
  emit(j, f, "estimate_single.json");
  return 0;
}

int cmd_estimate_multi(const Flags& f) {
  const RunConfig c = effective_config(f);
  const LoadedData ld = load(f, c);
  const MultiDataset md = to_multi(ld.data, c.schema);
  md.validate("estimate-multi");
  if (f.mediator_index < 1 || f.mediator_index > md.k())
    fail_validation("estimate-multi", "mediator index out of range",
                    {{"mediator_index", to_text(f.mediator_index)}, {"mediators", to_text(md.k())}});
  json j;
  if (f.interaction) {
    const InteractionReport ir = estimate_interaction(md, c.folds, c.multi, c.regressor, c.ci_level, c.seed);
    j = to_json(ir);
    j["mediator_index"] = f.mediator_index;
  } else {
    j = to_json(estimate_eie(md, f.mediator_index - 1, c.folds, c.multi, c.regressor, c.ci_level, c.seed));
  }
  j["data"] = data_block(ld, f.data_path);
  j["config"] = to_json(c);
  emit(j, f, "estimate_multi.json");
  return 0;
}

int cmd_report_or(const Flags& f) {
  const RunConfig c = effective_config(f);
  if (c.schema.outcome_type != OutcomeType::binary)
    fail_validation("report-or", "odds ratios need --outcome-type binary");
  const LoadedData ld = load(f, c);
  json j = to_json(estimate_odds_ratios(ld.data, c.folds, c.balancing, c.regressor, c.ci_level, c.seed));
  j["data"] = data_block(ld, f.data_path);
  j["config"] = to_json(c);
  emit(j, f, "report_or.json");
  return 0;
}

int cmd_simulate(const Flags& f) {
  const RunConfig c = effective_config(f);
  SuiteOptions o;
  for (long long n : f.n) {
    if (n < 10) fail_validation("simulate", "--n must be at least 10", {{"n", to_text(n)}});
    o.n.push_back(static_cast<Index>(n));
  }
  if (f.reps < 0) fail_validation("simulate", "--reps must be positive");
  o.reps = f.reps;
  o.seed = c.seed;
  o.folds = c.folds;
  o.ci_level = c.ci_level;
  o.balancing = c.balancing;
  o.multi = c.multi;
  o.regressor = c.regressor;
  o.threads = c.threads;
  const SuiteResult res = run_suite(f.suite, o);
  json j = res.summary;
  j["config"] = to_json(c);
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    std::ofstream(fs::path(f.out) / (f.suite + ".csv")) << res.table.to_csv();
  }
  emit(j, f, f.suite + ".json");
  return 0;
}

int cmd_generate(const Flags& f) {
  const Index n = f.n.empty() ? 2000 : static_cast<Index>(f.n.front());
  if (n < 1) fail_validation("generate", "--n must be positive");
  const std::uint64_t seed = f.seed.value_or(2026);
  Dataset d;
  if (f.dgp == "paper") {
    d = PaperDgp().sample(n, seed);
  } else if (f.dgp == "discrete") {
    d = DiscreteSingleDgp(discrete_single_default()).sample(n, seed);
  } else if (f.dgp == "discrete-binary") {
    d = DiscreteSingleDgp(discrete_single_binary()).sample(n, seed);
  } else if (f.dgp == "discrete-multi" || f.dgp == "discrete-multi-null") {
    d = DiscreteMultiDgp(discrete_multi_default(f.dgp == "discrete-multi-null")).sample(n, seed).composite();
  } else if (f.dgp == "gaussian-multi") {
    d = GaussianMultiDgp().sample(n, seed).composite();
  } else {
    fail_validation("generate", "unknown dgp",
                    {{"dgp", f.dgp},
                     {"available", "paper, discrete, discrete-binary, discrete-multi, discrete-multi-null, gaussian-multi"}});
  }
  const ColumnSchema s = default_schema(d.X.cols(), d.M.cols(), d.outcome_type);
  if (f.out.empty()) {
    write_csv(std::cout, d, s);
  } else {
    std::ofstream out(f.out);
    if (!out) fail_validation("generate", "cannot write output file", {{"path", f.out}});
    write_csv(out, d, s);
  }
  return 0;
}

int report_error(const std::string& kind, const std::string& where, const std::string& message,
                 const std::map<std::string, std::string>& context, int code) {
  json e{{"error", {{"kind", kind}, {"where", where}, {"message", message}, {"context", context}, {"exit_code", code}}}};
  std::cerr << e.dump() << '\n';
  return code;
}

void add_run_options(CLI::App* s, Flags& f) {
  s->add_option("--config", f.config_path, "JSON run configuration; flags override its keys");
  s->add_option("--seed", f.seed, "Random seed");
  s->add_option("--folds", f.folds, "Cross-fitting folds (>= 2)");
  s->add_option("--ci-level", f.ci_level, "Confidence level in (0, 1)");
  s->add_option("--threads", f.threads, "Worker threads (capped by MEDBALANCE_THREADS)");
  s->add_option("--regressor", f.regressor, "kernel-ridge or tree-ensemble");
  s->add_option("--out", f.out, "Output directory for report files");
}

void add_data_options(CLI::App* s, Flags& f) {
  s->add_option("--data", f.data_path, "Input CSV with a header row");
  s->add_option("--covariates", f.covariates, "Covariate columns")->delimiter(',');
  s->add_option("--treatment", f.treatment, "Treatment column (0/1)");
  s->add_option("--mediators", f.mediators, "Mediator columns")->delimiter(',');
  s->add_option("--outcome", f.outcome, "Outcome column");
  s->add_option("--outcome-type", f.outcome_type, "continuous or binary");
  s->add_flag("--no-complete-case", f.no_complete_case, "Fail on missing cells instead of dropping rows");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel balancing estimators for mediation effects"};
  app.require_subcommand(1);
  Flags f;

  auto* single = app.add_subcommand("estimate-single", "Two-stage estimate of E[Y(1, M(0))]");
  add_run_options(single, f);
  add_data_options(single, f);
  single->add_option("--estimator", f.estimator, "2s, naive or tts");

  auto* multi = app.add_subcommand("estimate-multi", "Mediator-specific indirect effect");
  add_run_options(multi, f);
  add_data_options(multi, f);
  multi->add_option("--mediator-index", f.mediator_index, "Mediator block, 1-based");
  multi->add_option("--blocks", f.blocks, "Mediator blocks, e.g. \"M1;M2,M3\" (default: one per column)");
  multi->add_flag("--interaction", f.interaction, "Report the full decomposition with the interaction term");

  auto* orr = app.add_subcommand("report-or", "Natural direct and indirect effect odds ratios");
  add_run_options(orr, f);
  add_data_options(orr, f);

  auto* sim = app.add_subcommand("simulate", "Replication suites: table1, table2, table3, oracle");
  add_run_options(sim, f);
  sim->add_option("--suite", f.suite, "Suite name")->required();
  sim->add_option("--n", f.n, "Sample size(s)")->delimiter(',');
  sim->add_option("--reps", f.reps, "Replications per sample size");

  auto* gen = app.add_subcommand("generate", "Write a simulated dataset as CSV");
  gen->add_option("--dgp", f.dgp, "paper, discrete, discrete-binary, discrete-multi, discrete-multi-null, gaussian-multi");
  gen->add_option("--n", f.n, "Sample size")->expected(1);
  gen->add_option("--seed", f.seed, "Random seed");
  gen->add_option("--out", f.out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("validation", "arguments", e.what(), {}, 2);
  }

  try {
    if (*single) return cmd_estimate_single(f);
    if (*multi) return cmd_estimate_multi(f);
    if (*orr) return cmd_report_or(f);
    if (*sim) return cmd_simulate(f);
    return cmd_generate(f);
  } catch (const Error& e) {
    const bool v = e.kind() == ErrorKind::validation;
    return report_error(v ? "validation" : "numerical", e.where(), e.detail(), e.context(), v ? 2 : 3);
  } catch (const std::exception& e) {
    return report_error("internal", "medcli", e.what(), {}, 1);
  }
}
