#pragma once

#include "amalgam/common.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace amalgam {

// Column-role mapping for comma-separated files. Parsed from a key-value
// config file; roles name columns of the header row.
struct ColumnRoles {
  std::vector<std::string> feature_columns;  // empty + features_all -> all leftover columns
  bool features_all = false;
  std::string decision_column;
  std::string expert_column;
  std::string outcome_column;    // optional ("" = absent)
  std::string group_column;      // optional
  std::string construct_column;  // optional
  std::string id_column;         // optional; row index used when absent
  std::string linkage_column;    // optional
  std::vector<std::string> ignore_columns;  // excluded from features_all sweeps

  static ColumnRoles parse(const std::string& text);
  static ColumnRoles load(const std::string& path);
};

// Canonical tabular dataset: covariates plus one decision per case, with
// optional censored outcome, group tag and simulation-only construct label.
// Expert ids are dense in [1, k]; the original ids are kept for reporting.
// Immutable by convention after construction/validation.
struct DecisionDataset {
  Matrix features;                                // n x m
  std::vector<int> decisions;                     // D, binary
  std::vector<std::optional<int>> outcomes;       // Y; nullopt = censored
  std::vector<int> expert_ids;                    // dense, 1..k
  std::vector<std::optional<int>> group;          // protected-group indicator
  std::vector<std::optional<int>> construct;      // Y^c, total when present
  std::vector<std::string> case_ids;              // unique
  std::vector<std::string> linkage;               // optional fold-linkage keys
  std::vector<std::string> expert_names;          // expert_names[h-1] = original id
  std::vector<std::string> feature_names;
  int expert_count = 0;

  long long rows() const { return features.rows(); }
  long long cols() const { return features.cols(); }

  bool has_outcomes() const {
    for (const auto& y : outcomes)
      if (y.has_value()) return true;
    return false;
  }
  bool has_group() const {
    return !group.empty() && group.front().has_value();
  }
  bool has_construct() const {
    return !construct.empty() && construct.front().has_value();
  }

  void validate(std::optional<int> selective_decision = std::nullopt) const;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline int parse_binary(const std::string& v, const std::string& what, long long row) {
  if (v == "0") return 0;
  if (v == "1") return 1;
  throw DataError(what + " must be 0 or 1, got '" + v + "' at row " +
                  std::to_string(row));
}

}  // namespace detail

inline ColumnRoles ColumnRoles::parse(const std::string& text) {
  ColumnRoles roles;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("schema line without '=': " + line);
    }
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    if (key == "decision") {
      roles.decision_column = val;
    } else if (key == "expert") {
      roles.expert_column = val;
    } else if (key == "outcome") {
      roles.outcome_column = val;
    } else if (key == "group") {
      roles.group_column = val;
    } else if (key == "construct") {
      roles.construct_column = val;
    } else if (key == "id") {
      roles.id_column = val;
    } else if (key == "linkage") {
      roles.linkage_column = val;
    } else if (key == "features") {
      if (val == "*") {
        roles.features_all = true;
      } else {
        std::istringstream fs(val);
        std::string f;
        while (std::getline(fs, f, ',')) {
          f = detail::trim(f);
          if (!f.empty()) roles.feature_columns.push_back(f);
        }
      }
    } else if (key == "ignore") {
      std::istringstream fs(val);
      std::string f;
      while (std::getline(fs, f, ',')) {
        f = detail::trim(f);
        if (!f.empty()) roles.ignore_columns.push_back(f);
      }
    } else {
      throw DataError("unknown schema role: " + key);
    }
  }
  if (roles.decision_column.empty()) throw DataError("schema missing 'decision' role");
  if (roles.expert_column.empty()) throw DataError("schema missing 'expert' role");
  if (!roles.features_all && roles.feature_columns.empty()) {
    throw DataError("schema missing 'features' role");
  }
  return roles;
}

inline ColumnRoles ColumnRoles::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

inline void DecisionDataset::validate(std::optional<int> selective_decision) const {
  const long long n = rows();
  if (n < 1) throw DataError("dataset is empty");
  if (cols() < 1) throw DataError("dataset has no feature columns");
  auto check_len = [&](size_t len, const char* what) {
    if (static_cast<long long>(len) != n) {
      throw DataError(std::string(what) + " length does not match row count");
    }
  };
  check_len(decisions.size(), "decisions");
  check_len(outcomes.size(), "outcomes");
  check_len(expert_ids.size(), "expert_ids");
  check_len(case_ids.size(), "case_ids");
  if (!group.empty()) check_len(group.size(), "group");
  if (!construct.empty()) check_len(construct.size(), "construct");
  if (expert_count < 1) throw DataError("expert_count must be >= 1");

  std::vector<char> seen(static_cast<size_t>(expert_count), 0);
  for (long long i = 0; i < n; ++i) {
    const int e = expert_ids[static_cast<size_t>(i)];
    if (e < 1 || e > expert_count) {
      throw DataError("expert id out of range at row " + std::to_string(i));
    }
    seen[static_cast<size_t>(e - 1)] = 1;
  }
  for (int h = 0; h < expert_count; ++h) {
    if (!seen[static_cast<size_t>(h)]) {
      throw DataError("expert " + std::to_string(h + 1) + " has no cases (ids not dense)");
    }
  }
  std::set<std::string> ids(case_ids.begin(), case_ids.end());
  if (static_cast<long long>(ids.size()) != n) {
    throw DataError("case ids are not unique");
  }
  if (!construct.empty() && construct.front().has_value()) {
    for (long long i = 0; i < n; ++i) {
      if (!construct[static_cast<size_t>(i)].has_value()) {
        throw DataError("construct label missing at row " + std::to_string(i) +
                        " (oracle must be total)");
      }
    }
  }
  if (selective_decision.has_value()) {
    const int dstar = *selective_decision;
    for (long long i = 0; i < n; ++i) {
      const bool observed = outcomes[static_cast<size_t>(i)].has_value();
      const bool should = decisions[static_cast<size_t>(i)] == dstar;
      if (observed && !should) {
        throw DataError("outcome present at row " + std::to_string(i) +
                        " although decision != observing decision " +
                        std::to_string(dstar));
      }
      if (!observed && should) {
        throw DataError("outcome censored at row " + std::to_string(i) +
                        " although decision == observing decision " +
                        std::to_string(dstar));
      }
    }
  }
  if (!features.allFinite()) throw DataError("non-finite feature value");
}

// Loads a comma-separated file with a header row. Empty outcome fields encode
// censoring. Expert ids are re-indexed densely to [1, k] keeping first-seen
// order of the original ids.
inline DecisionDataset load_dataset(const std::string& path, const ColumnRoles& roles,
                                    std::optional<int> selective_decision = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path);
  std::string line;
  // skip provenance comment lines
  do {
    if (!std::getline(in, line)) throw DataError("empty file: " + path);
  } while (!line.empty() && line[0] == '#');
  if (detail::trim(line).empty()) throw DataError("empty file: " + path);
  const std::vector<std::string> header = detail::split_csv_line(line);

  std::map<std::string, size_t> col_index;
  for (size_t j = 0; j < header.size(); ++j) {
    col_index[detail::trim(header[j])] = j;
  }
  auto find_col = [&](const std::string& name, bool required) -> long long {
    if (name.empty()) return -1;
    auto it = col_index.find(name);
    if (it == col_index.end()) {
      if (required) throw DataError("missing required column '" + name + "' in " + path);
      return -1;
    }
    return static_cast<long long>(it->second);
  };

  const long long c_dec = find_col(roles.decision_column, true);
  const long long c_exp = find_col(roles.expert_column, true);
  const long long c_out = find_col(roles.outcome_column, !roles.outcome_column.empty());
  const long long c_grp = find_col(roles.group_column, !roles.group_column.empty());
  const long long c_con = find_col(roles.construct_column, !roles.construct_column.empty());
  const long long c_id = find_col(roles.id_column, !roles.id_column.empty());
  const long long c_lnk = find_col(roles.linkage_column, !roles.linkage_column.empty());

  std::vector<size_t> feat_cols;
  std::vector<std::string> feat_names;
  if (roles.features_all) {
    std::set<long long> reserved = {c_dec, c_exp, c_out, c_grp, c_con, c_id, c_lnk};
    for (const auto& ign : roles.ignore_columns) {
      long long c = find_col(ign, false);
      if (c >= 0) reserved.insert(c);
    }
    for (size_t j = 0; j < header.size(); ++j) {
      if (!reserved.count(static_cast<long long>(j))) {
        feat_cols.push_back(j);
        feat_names.push_back(detail::trim(header[j]));
      }
    }
  } else {
    for (const auto& f : roles.feature_columns) {
      long long c = find_col(f, true);
      feat_cols.push_back(static_cast<size_t>(c));
      feat_names.push_back(f);
    }
  }
  if (feat_cols.empty()) throw DataError("schema selects no feature columns");

  std::vector<std::vector<double>> feat_rows;
  DecisionDataset ds;
  std::map<std::string, int> expert_index;
  long long row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    std::vector<double> fr;
    fr.reserve(feat_cols.size());
    for (size_t j : feat_cols) fr.push_back(parse_double(detail::trim(cells[j])));
    feat_rows.push_back(std::move(fr));

    ds.decisions.push_back(detail::parse_binary(detail::trim(cells[static_cast<size_t>(c_dec)]), "decision", row));
    const std::string ename = detail::trim(cells[static_cast<size_t>(c_exp)]);
    auto it = expert_index.find(ename);
    if (it == expert_index.end()) {
      const int dense = static_cast<int>(expert_index.size()) + 1;
      expert_index.emplace(ename, dense);
      ds.expert_names.push_back(ename);
      ds.expert_ids.push_back(dense);
    } else {
      ds.expert_ids.push_back(it->second);
    }
    if (c_out >= 0) {
      const std::string v = detail::trim(cells[static_cast<size_t>(c_out)]);
      if (v.empty()) {
        ds.outcomes.emplace_back(std::nullopt);
      } else {
        ds.outcomes.emplace_back(detail::parse_binary(v, "outcome", row));
      }
    } else {
      ds.outcomes.emplace_back(std::nullopt);
    }
    if (c_grp >= 0) {
      const std::string v = detail::trim(cells[static_cast<size_t>(c_grp)]);
      ds.group.emplace_back(v.empty() ? std::optional<int>{}
                                      : std::optional<int>{detail::parse_binary(v, "group", row)});
    }
    if (c_con >= 0) {
      const std::string v = detail::trim(cells[static_cast<size_t>(c_con)]);
      ds.construct.emplace_back(v.empty() ? std::optional<int>{}
                                          : std::optional<int>{detail::parse_binary(v, "construct", row)});
    }
    ds.case_ids.push_back(c_id >= 0 ? detail::trim(cells[static_cast<size_t>(c_id)])
                                    : std::to_string(row));
    if (c_lnk >= 0) ds.linkage.push_back(detail::trim(cells[static_cast<size_t>(c_lnk)]));
    ++row;
  }
  if (row == 0) throw DataError("file has a header but no rows: " + path);

  ds.features.resize(row, static_cast<long long>(feat_cols.size()));
  for (long long i = 0; i < row; ++i) {
    for (size_t j = 0; j < feat_cols.size(); ++j) {
      ds.features(i, static_cast<long long>(j)) = feat_rows[static_cast<size_t>(i)][j];
    }
  }
  ds.feature_names = feat_names;
  ds.expert_count = static_cast<int>(expert_index.size());
  ds.validate(selective_decision);
  return ds;
}

// Writes the same comma-separated format the loader reads. Column order is
// normalized: id, features, expert, decision, outcome, group, construct.
inline void write_dataset(const DecisionDataset& ds, const std::string& path,
                          const std::string& provenance = "") {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  if (!provenance.empty()) out << "# " << provenance << "\n";
  out << "id";
  for (const auto& f : ds.feature_names) out << "," << f;
  out << ",expert,decision";
  const bool w_out = !ds.outcomes.empty();
  const bool w_grp = !ds.group.empty();
  const bool w_con = !ds.construct.empty();
  if (w_out) out << ",outcome";
  if (w_grp) out << ",group";
  if (w_con) out << ",construct";
  out << "\n";
  for (long long i = 0; i < ds.rows(); ++i) {
    const size_t si = static_cast<size_t>(i);
    out << ds.case_ids[si];
    for (long long j = 0; j < ds.cols(); ++j) out << "," << format_double(ds.features(i, j));
    out << "," << ds.expert_names[static_cast<size_t>(ds.expert_ids[si] - 1)];
    out << "," << ds.decisions[si];
    if (w_out) {
      out << ",";
      if (ds.outcomes[si].has_value()) out << *ds.outcomes[si];
    }
    if (w_grp) {
      out << ",";
      if (ds.group[si].has_value()) out << *ds.group[si];
    }
    if (w_con) {
      out << ",";
      if (ds.construct[si].has_value()) out << *ds.construct[si];
    }
    out << "\n";
  }
}

// Row-subset view materialized as a new dataset. Expert ids are kept dense by
// re-indexing against the experts present in the subset.
inline DecisionDataset subset(const DecisionDataset& ds, const std::vector<long long>& idx,
                              bool reindex_experts = false) {
  DecisionDataset out;
  out.features.resize(static_cast<long long>(idx.size()), ds.cols());
  out.feature_names = ds.feature_names;
  std::map<int, int> remap;
  for (size_t r = 0; r < idx.size(); ++r) {
    const long long i = idx[r];
    const size_t si = static_cast<size_t>(i);
    out.features.row(static_cast<long long>(r)) = ds.features.row(i);
    out.decisions.push_back(ds.decisions[si]);
    out.outcomes.push_back(ds.outcomes[si]);
    out.case_ids.push_back(ds.case_ids[si]);
    if (!ds.group.empty()) out.group.push_back(ds.group[si]);
    if (!ds.construct.empty()) out.construct.push_back(ds.construct[si]);
    if (!ds.linkage.empty()) out.linkage.push_back(ds.linkage[si]);
    int e = ds.expert_ids[si];
    if (reindex_experts) {
      auto it = remap.find(e);
      if (it == remap.end()) {
        int dense = static_cast<int>(remap.size()) + 1;
        remap.emplace(e, dense);
        out.expert_names.push_back(ds.expert_names[static_cast<size_t>(e - 1)]);
        e = dense;
      } else {
        e = it->second;
      }
    }
    out.expert_ids.push_back(e);
  }
  if (reindex_experts) {
    out.expert_count = static_cast<int>(remap.size());
  } else {
    out.expert_count = ds.expert_count;
    out.expert_names = ds.expert_names;
  }
  return out;
}

}  // namespace amalgam
