#pragma once

#include "amalgam/common.hpp"
#include "amalgam/amalgamation.hpp"
#include "amalgam/calibration.hpp"
#include "amalgam/consistency.hpp"
#include "amalgam/dataset.hpp"
#include "amalgam/influence.hpp"
#include "amalgam/metrics.hpp"
#include "amalgam/predictors.hpp"
#include "amalgam/split.hpp"

#include <json.hpp>

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace amalgam {

enum class EvalModel { Outcome, Decision, Amalgam, Hybrid, RetrainedHybrid, Deferral };

inline const char* eval_model_name(EvalModel m) {
  switch (m) {
    case EvalModel::Outcome: return "outcome";
    case EvalModel::Decision: return "decision";
    case EvalModel::Amalgam: return "amalgam";
    case EvalModel::Hybrid: return "hybrid";
    case EvalModel::RetrainedHybrid: return "hybrid-retrained";
    case EvalModel::Deferral: return "deferral";
  }
  return "?";
}

inline EvalModel parse_eval_model(const std::string& s) {
  if (s == "outcome") return EvalModel::Outcome;
  if (s == "decision") return EvalModel::Decision;
  if (s == "amalgam") return EvalModel::Amalgam;
  if (s == "hybrid") return EvalModel::Hybrid;
  if (s == "hybrid-retrained") return EvalModel::RetrainedHybrid;
  if (s == "deferral") return EvalModel::Deferral;
  throw UsageError("unknown model '" + s + "'");
}

struct EvalProtocol {
  int repetitions = 10;
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
  double screenout_rate = 0.3;
  std::vector<double> precision_points = {0.1, 0.25, 0.5, 0.75, 1.0};
};

// Mean and normal-approximation 95% half-width across repetitions. The
// half-width is undefined (NaN) for a single run.
struct Aggregate {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double half_width = std::numeric_limits<double>::quiet_NaN();
  int runs = 0;

  static Aggregate of(const std::vector<double>& values) {
    Aggregate a;
    a.runs = static_cast<int>(values.size());
    if (values.empty()) return a;
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / static_cast<double>(values.size());
    if (values.size() >= 2) {
      double ss = 0.0;
      for (double v : values) ss += (v - a.mean) * (v - a.mean);
      const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
      a.half_width = 1.959963984540054 * sd / std::sqrt(static_cast<double>(values.size()));
    }
    return a;
  }
};

struct ModelReport {
  std::string model;
  Aggregate auc;
  std::map<int, Aggregate> tnr_by_group;
  std::vector<std::pair<double, Aggregate>> precision_curve;
  Aggregate gap_dp;
  Aggregate coverage;  // deferral only: fraction of deferred cases
  int completed_runs = 0;
};

struct EvaluationReport {
  std::vector<ModelReport> models;
  Aggregate delta_gap_dp;  // amalgam vs outcome at equal selection rates
  Aggregate amalgamated_fraction;
  int requested_runs = 0;
  int completed_runs = 0;
  std::vector<std::string> failures;
  std::vector<std::string> notes;
  std::vector<std::string> decision_model_documents;  // serialized f_h per run
};

namespace detail {

struct RepetitionScores {
  std::map<EvalModel, std::vector<double>> scores;
  std::map<EvalModel, double> coverage;
  std::vector<int> eval_labels;      // construct when available, observed Y otherwise
  std::vector<char> eval_mask;       // rows with a defined evaluation label
  std::vector<int> group;            // -1 when absent
  double amalgamated_fraction = 0.0;
  std::string decision_model_doc;
};

}  // namespace detail

// One train/fit/score pass over a split. Shared by the evaluation harness and
// the pipeline command so intermediate artifacts agree.
struct FittedStack {
  CalibratedDecisionModel decision_model;                 // trained on D
  std::shared_ptr<InfluenceEngine> engine;
  ConsistencyAssignment assignment;                       // training-time membership
  AmalgamationPlan plan;
  CalibratedDecisionModel amalgam_model;
  std::optional<CalibratedDecisionModel> outcome_model;   // trained on observed Y
  std::optional<CalibratedDecisionModel> outside_outcome_model;  // Y outside the set
  std::optional<MembershipRule> rule;
};

inline FittedStack fit_stack(const DecisionDataset& train, const ConsistencyParams& params,
                             AmalgamationMode mode, const GlmConfig& glm_cfg,
                             InfluenceScale scale = InfluenceScale::PerMeanRisk) {
  FittedStack st;
  const long long n = train.rows();
  Vector ones = Vector::Ones(n);
  st.decision_model = fit_calibrated(train.features, train.decisions, ones, glm_cfg);
  st.engine = std::make_shared<InfluenceEngine>(st.decision_model.base, train.features,
                                                train.decisions, train.expert_ids,
                                                train.expert_count, ones, scale);
  std::vector<InfluenceProfile> profiles;
  profiles.reserve(static_cast<size_t>(n));
  for (long long i = 0; i < n; ++i) {
    profiles.push_back(st.engine->profile(train.features.row(i).transpose()));
  }
  st.assignment = build_consistency_set(st.decision_model, train.features, profiles, params,
                                        &train.decisions);
  st.plan = amalgamate(train, st.assignment, mode);
  st.amalgam_model = fit_amalgam_model(train, st.plan, glm_cfg);

  auto fit_on_rows = [&](const std::vector<long long>& rows) -> std::optional<CalibratedDecisionModel> {
    if (rows.size() < 2) return std::nullopt;
    Matrix X(static_cast<long long>(rows.size()), train.cols());
    std::vector<int> y;
    y.reserve(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      X.row(static_cast<long long>(r)) = train.features.row(rows[r]);
      y.push_back(*train.outcomes[static_cast<size_t>(rows[r])]);
    }
    long long npos = 0;
    for (int v : y) npos += v;
    if (npos == 0 || npos == static_cast<long long>(y.size())) return std::nullopt;
    Vector w = Vector::Ones(static_cast<long long>(rows.size()));
    return fit_calibrated(X, y, w, glm_cfg);
  };

  std::vector<long long> observed_rows, outside_rows;
  for (long long i = 0; i < n; ++i) {
    const size_t si = static_cast<size_t>(i);
    if (!train.outcomes[si].has_value()) continue;
    observed_rows.push_back(i);
    if (!in_selected_set(st.assignment.membership[si], mode)) outside_rows.push_back(i);
  }
  st.outcome_model = fit_on_rows(observed_rows);
  st.outside_outcome_model = fit_on_rows(outside_rows);
  st.rule = MembershipRule(st.decision_model, st.engine, params, mode);
  return st;
}

// Scores the requested models on a test fold. Deferral substitutes the
// observed human decision for deferred cases, since deferring hands the case
// to the human.
inline detail::RepetitionScores score_models(const FittedStack& st, const DecisionDataset& test,
                                             const std::vector<EvalModel>& models) {
  detail::RepetitionScores out;
  const long long n = test.rows();
  out.eval_labels.resize(static_cast<size_t>(n), 0);
  out.eval_mask.resize(static_cast<size_t>(n), 0);
  out.group.resize(static_cast<size_t>(n), -1);
  const bool has_construct = test.has_construct();
  for (long long i = 0; i < n; ++i) {
    const size_t si = static_cast<size_t>(i);
    if (has_construct) {
      out.eval_labels[si] = *test.construct[si];
      out.eval_mask[si] = 1;
    } else if (test.outcomes[si].has_value()) {
      out.eval_labels[si] = *test.outcomes[si];
      out.eval_mask[si] = 1;
    }
    if (!test.group.empty() && test.group[si].has_value()) out.group[si] = *test.group[si];
  }
  // Membership decisions are shared across hybrid and deferral scoring.
  std::vector<char> member;
  const bool needs_rule = std::any_of(models.begin(), models.end(), [](EvalModel m) {
    return m == EvalModel::Hybrid || m == EvalModel::RetrainedHybrid || m == EvalModel::Deferral;
  });
  if (needs_rule) {
    member.resize(static_cast<size_t>(n), 0);
    for (long long i = 0; i < n; ++i) {
      member[static_cast<size_t>(i)] =
          st.rule->contains(test.features.row(i).transpose()) ? 1 : 0;
    }
  }
  auto need_outcome = [&]() -> const CalibratedDecisionModel& {
    if (!st.outcome_model) throw DataError("outcome model unavailable (single-class view)");
    return *st.outcome_model;
  };
  auto need_outside = [&]() -> const CalibratedDecisionModel& {
    if (!st.outside_outcome_model) {
      throw DataError("outside-set outcome model unavailable (single-class view)");
    }
    return *st.outside_outcome_model;
  };
  for (EvalModel m : models) {
    std::vector<double> scores(static_cast<size_t>(n), 0.0);
    long long deferred = 0;
    for (long long i = 0; i < n; ++i) {
      const size_t si = static_cast<size_t>(i);
      const Vector x = test.features.row(i).transpose();
      switch (m) {
        case EvalModel::Outcome:
          scores[si] = need_outcome().predict_proba(x);
          break;
        case EvalModel::Decision:
          scores[si] = st.decision_model.predict_proba(x);
          break;
        case EvalModel::Amalgam:
          scores[si] = st.amalgam_model.predict_proba(x);
          break;
        case EvalModel::Hybrid:
          scores[si] = member[si] ? st.decision_model.predict_proba(x)
                                  : need_outcome().predict_proba(x);
          break;
        case EvalModel::RetrainedHybrid:
          scores[si] = member[si] ? st.decision_model.predict_proba(x)
                                  : need_outside().predict_proba(x);
          break;
        case EvalModel::Deferral:
          if (member[si]) {
            ++deferred;
            scores[si] = static_cast<double>(test.decisions[si]);
          } else {
            scores[si] = need_outside().predict_proba(x);
          }
          break;
      }
    }
    out.scores[m] = std::move(scores);
    out.coverage[m] = static_cast<double>(deferred) / static_cast<double>(n);
  }
  return out;
}

inline EvaluationReport run_evaluation(const DecisionDataset& ds, const std::vector<EvalModel>& models,
                                       const EvalProtocol& protocol, const ConsistencyParams& params,
                                       AmalgamationMode mode = AmalgamationMode::Full,
                                       const GlmConfig& glm_cfg = GlmConfig{},
                                       InfluenceScale scale = InfluenceScale::PerMeanRisk) {
  if (protocol.repetitions < 1) throw DataError("repetitions must be >= 1");
  EvaluationReport report;
  report.requested_runs = protocol.repetitions;

  std::mt19937_64 seed_stream(protocol.seed);
  std::vector<std::uint64_t> rep_seeds;
  for (int r = 0; r < protocol.repetitions; ++r) rep_seeds.push_back(seed_stream());

  struct PerModelSeries {
    std::vector<double> auc;
    std::map<int, std::vector<double>> tnr;
    std::map<double, std::vector<double>> precision;
    std::vector<double> gap;
    std::vector<double> coverage;
    int completed = 0;
  };
  std::map<EvalModel, PerModelSeries> series;
  std::vector<double> delta_gaps;
  std::vector<double> amalg_fracs;

  for (int r = 0; r < protocol.repetitions; ++r) {
    try {
      SplitPlan split = monte_carlo_split(ds, protocol.train_fraction, rep_seeds[static_cast<size_t>(r)]);
      DecisionDataset train = subset(ds, split.train_indices);
      DecisionDataset test = subset(ds, split.test_indices);
      FittedStack st = fit_stack(train, params, mode, glm_cfg, scale);
      detail::RepetitionScores rep = score_models(st, test, models);
      rep.amalgamated_fraction = st.assignment.member_fraction();
      rep.decision_model_doc = serialize_calibrated(st.decision_model);
      amalg_fracs.push_back(rep.amalgamated_fraction);
      report.decision_model_documents.push_back(rep.decision_model_doc);

      // restrict metric inputs to rows with a defined evaluation label
      std::vector<size_t> rows;
      for (size_t i = 0; i < rep.eval_mask.size(); ++i) {
        if (rep.eval_mask[i]) rows.push_back(i);
      }
      std::vector<int> labels;
      labels.reserve(rows.size());
      std::vector<int> group;
      group.reserve(rows.size());
      bool group_ok = true;
      for (size_t i : rows) {
        labels.push_back(rep.eval_labels[i]);
        if (rep.group[i] < 0) group_ok = false;
        group.push_back(rep.group[i] == 1 ? 1 : 0);
      }
      long long g1 = 0;
      for (int g : group) g1 += g;
      const bool both_groups = group_ok && g1 > 0 && g1 < static_cast<long long>(group.size());

      for (EvalModel m : models) {
        std::vector<double> sc;
        sc.reserve(rows.size());
        for (size_t i : rows) sc.push_back(rep.scores[m][i]);
        PerModelSeries& s = series[m];
        s.auc.push_back(auc(sc, labels));
        if (both_groups) {
          for (int gval : {1, 0}) {
            std::vector<int> mask(group.size());
            for (size_t i = 0; i < group.size(); ++i) mask[i] = group[i] == gval ? 1 : 0;
            try {
              s.tnr[gval].push_back(tnr_at_screenout(sc, labels, mask, protocol.screenout_rate));
            } catch (const DataError&) {
              // group without true negatives in this fold: skip the entry
            }
          }
          const double tau = threshold_at_screenout(sc, protocol.screenout_rate);
          s.gap.push_back(dem_parity_gap(sc, group, tau));
        }
        for (double p : protocol.precision_points) {
          s.precision[p].push_back(precision_at_top(sc, labels, p));
        }
        s.coverage.push_back(rep.coverage[m]);
        s.completed += 1;
      }
      if (both_groups && rep.scores.count(EvalModel::Amalgam) && rep.scores.count(EvalModel::Outcome)) {
        std::vector<double> sa, sy;
        for (size_t i : rows) {
          sa.push_back(rep.scores[EvalModel::Amalgam][i]);
          sy.push_back(rep.scores[EvalModel::Outcome][i]);
        }
        const double tau_a = threshold_at_screenout(sa, protocol.screenout_rate);
        const double tau_y = threshold_at_screenout(sy, protocol.screenout_rate);
        delta_gaps.push_back(gap_shift(sa, tau_a, sy, tau_y, group));
      }
      report.completed_runs += 1;
    } catch (const Error& e) {
      report.failures.push_back("repetition " + std::to_string(r) + ": " + e.what());
    }
  }

  for (EvalModel m : models) {
    const PerModelSeries& s = series[m];
    ModelReport mr;
    mr.model = eval_model_name(m);
    mr.auc = Aggregate::of(s.auc);
    for (const auto& [g, vals] : s.tnr) mr.tnr_by_group[g] = Aggregate::of(vals);
    for (double p : protocol.precision_points) {
      auto it = s.precision.find(p);
      mr.precision_curve.emplace_back(p, Aggregate::of(it == s.precision.end()
                                                           ? std::vector<double>{}
                                                           : it->second));
    }
    mr.gap_dp = Aggregate::of(s.gap);
    mr.coverage = Aggregate::of(s.coverage);
    mr.completed_runs = s.completed;
    report.models.push_back(std::move(mr));
  }
  report.delta_gap_dp = Aggregate::of(delta_gaps);
  report.amalgamated_fraction = Aggregate::of(amalg_fracs);
  report.notes.push_back("external joint learning-to-defer baseline not included");
  return report;
}

// --- report export ---

inline nlohmann::json aggregate_json(const Aggregate& a) {
  nlohmann::json j;
  j["runs"] = a.runs;
  if (std::isnan(a.mean)) j["mean"] = nullptr;
  else j["mean"] = a.mean;
  if (std::isnan(a.half_width)) j["half_width_95"] = nullptr;
  else j["half_width_95"] = a.half_width;
  return j;
}

inline nlohmann::json report_json(const EvaluationReport& report, const std::string& provenance) {
  nlohmann::json j;
  j["provenance"] = provenance;
  j["requested_runs"] = report.requested_runs;
  j["completed_runs"] = report.completed_runs;
  j["failures"] = report.failures;
  j["notes"] = report.notes;
  j["delta_gap_dp"] = aggregate_json(report.delta_gap_dp);
  j["amalgamated_fraction"] = aggregate_json(report.amalgamated_fraction);
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : report.models) {
    nlohmann::json mj;
    mj["model"] = m.model;
    mj["auc"] = aggregate_json(m.auc);
    nlohmann::json tnr;
    for (const auto& [g, a] : m.tnr_by_group) tnr[std::to_string(g)] = aggregate_json(a);
    mj["tnr_by_group"] = tnr;
    nlohmann::json prec = nlohmann::json::array();
    for (const auto& [p, a] : m.precision_curve) {
      nlohmann::json pj;
      pj["p"] = p;
      pj["precision"] = aggregate_json(a);
      prec.push_back(pj);
    }
    mj["precision_curve"] = prec;
    mj["gap_dp"] = aggregate_json(m.gap_dp);
    mj["coverage"] = aggregate_json(m.coverage);
    mj["completed_runs"] = m.completed_runs;
    models.push_back(mj);
  }
  j["models"] = models;
  return j;
}

// Flat table mirroring the model x metric layout.
inline std::string report_csv(const EvaluationReport& report, const std::string& provenance) {
  std::ostringstream out;
  auto cell = [](const Aggregate& a) {
    if (a.runs == 0 || std::isnan(a.mean)) return std::string("undefined");
    std::string s = format_double(a.mean);
    if (!std::isnan(a.half_width)) s += " (" + format_double(a.half_width) + ")";
    else s += " (undefined)";
    return s;
  };
  out << "# " << provenance << "\n";
  out << "model,auc,tnr_group1,tnr_group0,gap_dp,coverage";
  for (const auto& [p, a] : report.models.empty()
                                 ? std::vector<std::pair<double, Aggregate>>{}
                                 : report.models.front().precision_curve) {
    (void)a;
    out << ",precision@" << format_double(p);
  }
  out << "\n";
  for (const auto& m : report.models) {
    out << m.model << "," << cell(m.auc);
    auto g1 = m.tnr_by_group.find(1);
    auto g0 = m.tnr_by_group.find(0);
    out << "," << (g1 != m.tnr_by_group.end() ? cell(g1->second) : "undefined");
    out << "," << (g0 != m.tnr_by_group.end() ? cell(g0->second) : "undefined");
    out << "," << cell(m.gap_dp);
    out << "," << cell(m.coverage);
    for (const auto& [p, a] : m.precision_curve) {
      (void)p;
      out << "," << cell(a);
    }
    out << "\n";
  }
  out << "delta_gap_dp," << cell(report.delta_gap_dp) << ",,,,\n";
  out << "amalgamated_fraction," << cell(report.amalgamated_fraction) << ",,,,\n";
  return out.str();
}

}  // namespace amalgam
