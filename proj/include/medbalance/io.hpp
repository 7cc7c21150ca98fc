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

#ifndef MEDBALANCE_IO_HPP
#define MEDBALANCE_IO_HPP

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "medbalance/dataset.hpp"
#include "medbalance/error.hpp"
#include "medbalance/stats.hpp"

namespace medbalance {

inline std::string to_string(OutcomeType t) { return t == OutcomeType::binary ? "binary" : "continuous"; }

inline OutcomeType parse_outcome_type(const std::string& s) {
  if (s == "continuous") return OutcomeType::continuous;
  if (s == "binary") return OutcomeType::binary;
  fail_validation("ColumnSchema", "outcome type must be continuous or binary", {{"value", s}});
}

// Column roles for a CSV file. For multi-mediator data, blocks groups the
// mediator names; when empty every mediator column is its own block.
struct ColumnSchema {
  std::vector<std::string> covariates;
  std::string treatment;
  std::vector<std::string> mediators;
  std::vector<std::vector<std::string>> blocks;
  std::string outcome;
  OutcomeType outcome_type = OutcomeType::continuous;

  [[nodiscard]] std::vector<std::string> columns() const {
    std::vector<std::string> c = covariates;
    c.push_back(treatment);
    c.insert(c.end(), mediators.begin(), mediators.end());
    c.push_back(outcome);
    return c;
  }

  void validate() const {
    if (covariates.empty()) fail_validation("ColumnSchema", "no covariate columns");
    if (treatment.empty()) fail_validation("ColumnSchema", "no treatment column");
    if (mediators.empty()) fail_validation("ColumnSchema", "no mediator columns");
    if (outcome.empty()) fail_validation("ColumnSchema", "no outcome column");
    std::set<std::string> seen;
    for (const auto& c : columns())
      if (!seen.insert(c).second) fail_validation("ColumnSchema", "column named twice", {{"column", c}});
    if (!blocks.empty()) {
      std::set<std::string> med(mediators.begin(), mediators.end()), used;
      for (const auto& b : blocks) {
        if (b.empty()) fail_validation("ColumnSchema", "empty mediator block");
        for (const auto& c : b) {
          if (!med.count(c)) fail_validation("ColumnSchema", "block refers to a non-mediator column", {{"column", c}});
          if (!used.insert(c).second) fail_validation("ColumnSchema", "mediator in two blocks", {{"column", c}});
        }
      }
      if (used.size() != med.size()) fail_validation("ColumnSchema", "blocks must cover every mediator column");
    }
  }

  // Column indices into M per block.
  [[nodiscard]] std::vector<std::vector<Index>> block_indices() const {
    std::vector<std::vector<Index>> out;
    if (blocks.empty()) {
      for (std::size_t c = 0; c < mediators.size(); ++c) out.push_back({static_cast<Index>(c)});
      return out;
    }
    for (const auto& b : blocks) {
      std::vector<Index> idx;
      for (const auto& name : b)
        for (std::size_t c = 0; c < mediators.size(); ++c)
          if (mediators[c] == name) idx.push_back(static_cast<Index>(c));
      out.push_back(idx);
    }
    return out;
  }
};

// X1..Xp, A, M1..Mq, Y.
inline ColumnSchema default_schema(Index p, Index q, OutcomeType t = OutcomeType::continuous) {
  ColumnSchema s;
  for (Index i = 0; i < p; ++i) s.covariates.push_back("X" + std::to_string(i + 1));
  s.treatment = "A";
  for (Index i = 0; i < q; ++i) s.mediators.push_back("M" + std::to_string(i + 1));
  s.outcome = "Y";
  s.outcome_type = t;
  return s;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<Index> lines;  // source line of each row, 1-based
};

// RFC-4180 style: quoted fields may hold commas, doubled quotes and line
// breaks; a trailing CR is dropped.
inline CsvTable parse_csv(std::istream& in, const std::string& where = "parse_csv") {
  CsvTable t;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, any = false, was_quoted = false;
  Index line = 1, start = 1;
  auto end_record = [&] {
    rec.push_back(field);
    field.clear();
    if (!any && rec.size() == 1) {
      // blank line
    } else if (t.header.empty()) {
      t.header = rec;
    } else {
      if (rec.size() != t.header.size())
        fail_validation(where, "row has the wrong number of fields",
                        {{"line", to_text(start)}, {"fields", to_text(rec.size())},
                         {"expected", to_text(t.header.size())}});
      t.rows.push_back(rec);
      t.lines.push_back(start);
    }
    rec.clear();
    any = false;
    was_quoted = false;
  };
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = any = true;
    } else if (c == ',') {
      rec.push_back(field);
      field.clear();
      any = true;
      was_quoted = false;
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      if (rec.empty() && field.empty() && !was_quoted) any = false;
      end_record();
      start = ++line;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) fail_validation(where, "unterminated quoted field", {{"line", to_text(start)}});
  if (!field.empty() && field.back() == '\r') field.pop_back();
  if (any || !rec.empty()) end_record();
  if (t.header.empty()) fail_validation(where, "missing header row");
  return t;
}

inline bool is_missing_cell(const std::string& s) { return s.empty() || s == "NA"; }

inline double parse_cell(const std::string& raw, const std::string& column, Index row) {
  std::size_t b = 0, e = raw.size();
  while (b < e && (raw[b] == ' ' || raw[b] == '\t')) ++b;
  while (e > b && (raw[e - 1] == ' ' || raw[e - 1] == '\t')) --e;
  double v = 0.0;
  const char* first = raw.data() + b;
  if (b < e && raw[b] == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, raw.data() + e, v);
  if (ec != std::errc() || ptr != raw.data() + e || !std::isfinite(v))
    fail_validation("load_csv", "cell is not a finite number",
                    {{"column", column}, {"row", to_text(row)}, {"value", raw}});
  return v;
}

struct LoadedData {
  Dataset data;
  Index rows_read = 0;
  Index dropped = 0;
};

// Rows are reported 1-based, counting data rows after the header.
inline LoadedData load_csv(std::istream& in, const ColumnSchema& schema, bool complete_case = true) {
  schema.validate();
  const CsvTable t = parse_csv(in, "load_csv");
  auto column = [&](const std::string& name) {
    for (std::size_t c = 0; c < t.header.size(); ++c)
      if (t.header[c] == name) return static_cast<Index>(c);
    fail_validation("load_csv", "column not found in header", {{"column", name}});
  };
  std::vector<Index> cx, cm;
  for (const auto& n : schema.covariates) cx.push_back(column(n));
  for (const auto& n : schema.mediators) cm.push_back(column(n));
  const Index ca = column(schema.treatment), cy = column(schema.outcome);
  std::vector<Index> all = cx;
  all.push_back(ca);
  all.insert(all.end(), cm.begin(), cm.end());
  all.push_back(cy);

  LoadedData out;
  out.rows_read = static_cast<Index>(t.rows.size());
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    bool missing = false;
    for (Index c : all)
      if (is_missing_cell(t.rows[r][static_cast<std::size_t>(c)])) {
        if (!complete_case)
          fail_validation("load_csv", "missing value and complete-case analysis is off",
                          {{"column", t.header[static_cast<std::size_t>(c)]}, {"row", to_text(r + 1)}});
        missing = true;
      }
    if (missing) {
      ++out.dropped;
    } else {
      keep.push_back(r);
    }
  }
  const Index n = static_cast<Index>(keep.size());
  Dataset& d = out.data;
  d.X.resize(n, static_cast<Index>(cx.size()));
  d.M.resize(n, static_cast<Index>(cm.size()));
  d.A.resize(n);
  d.Y.resize(n);
  d.outcome_type = schema.outcome_type;
  for (Index i = 0; i < n; ++i) {
    const std::size_t r = keep[static_cast<std::size_t>(i)];
    const auto& row = t.rows[r];
    const Index rownum = static_cast<Index>(r) + 1;
    for (std::size_t k = 0; k < cx.size(); ++k)
      d.X(i, static_cast<Index>(k)) = parse_cell(row[static_cast<std::size_t>(cx[k])], schema.covariates[k], rownum);
    for (std::size_t k = 0; k < cm.size(); ++k)
      d.M(i, static_cast<Index>(k)) = parse_cell(row[static_cast<std::size_t>(cm[k])], schema.mediators[k], rownum);
    d.A(i) = parse_cell(row[static_cast<std::size_t>(ca)], schema.treatment, rownum);
    if (d.A(i) != 0.0 && d.A(i) != 1.0)
      fail_validation("load_csv", "treatment must be 0 or 1",
                      {{"column", schema.treatment}, {"row", to_text(rownum)}, {"value", row[static_cast<std::size_t>(ca)]}});
    d.Y(i) = parse_cell(row[static_cast<std::size_t>(cy)], schema.outcome, rownum);
    if (schema.outcome_type == OutcomeType::binary && d.Y(i) != 0.0 && d.Y(i) != 1.0)
      fail_validation("load_csv", "binary outcome must be 0 or 1",
                      {{"column", schema.outcome}, {"row", to_text(rownum)}, {"value", row[static_cast<std::size_t>(cy)]}});
  }
  if (n == 0) fail_validation("load_csv", "no complete rows", {{"dropped", to_text(out.dropped)}});
  return out;
}

inline LoadedData load_csv(const std::string& path, const ColumnSchema& schema, bool complete_case = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_validation("load_csv", "cannot open file", {{"path", path}});
  return load_csv(in, schema, complete_case);
}

inline MultiDataset to_multi(const Dataset& d, const ColumnSchema& schema) {
  MultiDataset m{d.X, d.A, d.M, schema.block_indices(), d.Y, d.outcome_type};
  return m;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : to_text(v);
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  return q + "\"";
}

// Shortest round-trip formatting, so reloading reproduces every value bitwise.
inline void write_csv(std::ostream& out, const Dataset& d, const ColumnSchema& schema) {
  if (static_cast<Index>(schema.covariates.size()) != d.X.cols() ||
      static_cast<Index>(schema.mediators.size()) != d.M.cols())
    fail_validation("write_csv", "schema does not match the dataset shape");
  const auto cols = schema.columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << csv_quote(cols[c]);
  out << '\n';
  for (Index i = 0; i < d.n(); ++i) {
    for (Index k = 0; k < d.X.cols(); ++k) out << format_double(d.X(i, k)) << ',';
    out << format_double(d.A(i));
    for (Index k = 0; k < d.M.cols(); ++k) out << ',' << format_double(d.M(i, k));
    out << ',' << format_double(d.Y(i)) << '\n';
  }
}

}  // namespace medbalance

#endif  // MEDBALANCE_IO_HPP
