#pragma once

#include "amalgam/common.hpp"
#include "amalgam/consistency.hpp"
#include "amalgam/dataset.hpp"

#include <optional>
#include <vector>

namespace amalgam {

enum class AmalgamationMode { Full, PositiveOnly, NegativeOnly };

inline const char* amalgamation_mode_name(AmalgamationMode m) {
  switch (m) {
    case AmalgamationMode::PositiveOnly: return "positive-only";
    case AmalgamationMode::NegativeOnly: return "negative-only";
    default: return "full";
  }
}

enum class LabelProvenance { FromDecision, FromOutcome };

// Amalgamated training labels: the expert decision inside the selected
// consistency set, the observed outcome elsewhere. Cases whose outcome is
// censored and fall outside the set carry no usable label.
struct AmalgamationPlan {
  std::vector<int> labels;                  // valid where usable[i]
  std::vector<LabelProvenance> provenance;
  std::vector<char> usable;                 // 1 = has a training label
  AmalgamationMode mode = AmalgamationMode::Full;

  long long usable_count() const {
    long long c = 0;
    for (char u : usable) c += u;
    return c;
  }
  long long amalgamated_count() const {
    long long c = 0;
    for (size_t i = 0; i < provenance.size(); ++i) {
      if (usable[i] && provenance[i] == LabelProvenance::FromDecision) ++c;
    }
    return c;
  }
};

inline bool in_selected_set(Membership m, AmalgamationMode mode) {
  switch (mode) {
    case AmalgamationMode::PositiveOnly: return m == Membership::InA1;
    case AmalgamationMode::NegativeOnly: return m == Membership::InA0;
    default: return m != Membership::Outside;
  }
}

inline AmalgamationPlan amalgamate(const DecisionDataset& ds,
                                   const ConsistencyAssignment& assignment,
                                   AmalgamationMode mode = AmalgamationMode::Full) {
  const long long n = ds.rows();
  if (static_cast<long long>(assignment.membership.size()) != n) {
    throw DataError("assignment and dataset disagree on case count");
  }
  AmalgamationPlan plan;
  plan.mode = mode;
  plan.labels.resize(static_cast<size_t>(n), 0);
  plan.provenance.resize(static_cast<size_t>(n), LabelProvenance::FromOutcome);
  plan.usable.resize(static_cast<size_t>(n), 0);
  for (long long i = 0; i < n; ++i) {
    const size_t si = static_cast<size_t>(i);
    if (in_selected_set(assignment.membership[si], mode)) {
      plan.labels[si] = ds.decisions[si];
      plan.provenance[si] = LabelProvenance::FromDecision;
      plan.usable[si] = 1;
    } else if (ds.outcomes[si].has_value()) {
      plan.labels[si] = *ds.outcomes[si];
      plan.provenance[si] = LabelProvenance::FromOutcome;
      plan.usable[si] = 1;
    } else {
      plan.provenance[si] = LabelProvenance::FromOutcome;
      plan.usable[si] = 0;  // censored outside the set: no training label
    }
  }
  return plan;
}

// Fits the amalgam model on all cases carrying a usable amalgamated label.
inline CalibratedDecisionModel fit_amalgam_model(const DecisionDataset& ds,
                                                 const AmalgamationPlan& plan,
                                                 const GlmConfig& cfg = GlmConfig{},
                                                 bool calibrate = true) {
  std::vector<long long> rows;
  for (long long i = 0; i < ds.rows(); ++i) {
    if (plan.usable[static_cast<size_t>(i)]) rows.push_back(i);
  }
  if (rows.empty()) throw DataError("no usable amalgamated labels to train on");
  Matrix X(static_cast<long long>(rows.size()), ds.cols());
  std::vector<int> y;
  y.reserve(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    X.row(static_cast<long long>(r)) = ds.features.row(rows[r]);
    y.push_back(plan.labels[static_cast<size_t>(rows[r])]);
  }
  long long npos = 0;
  for (int v : y) npos += v;
  if (npos == 0 || npos == static_cast<long long>(y.size())) {
    throw DataError("amalgamated labels are single-class; cannot fit");
  }
  Vector w = Vector::Ones(static_cast<long long>(rows.size()));
  return fit_calibrated(X, y, w, cfg, calibrate);
}

struct ImprovementCheck {
  double mean_err_amalgamated = 0.0;  // mean |Yc - Y^A|
  double mean_err_observed = 0.0;     // mean |Yc - Y|
  double p_match_amalgamated = 0.0;   // P(Yc = Y^A | in set)
  double p_match_observed = 0.0;      // P(Yc = Y | in set)
  bool premise_held = false;
  bool conclusion_holds = false;
  long long evaluated = 0;
  long long in_set = 0;
};

// Empirical check of the amalgamation-improvement guarantee: when, inside the
// amalgamated set, the amalgamated label matches the construct at least as
// often as the observed label does, the overall mean absolute error cannot
// get worse. Evaluated on cases where both labels are defined.
inline ImprovementCheck improvement_check(const std::vector<int>& construct,
                                     const std::vector<std::optional<int>>& observed,
                                     const AmalgamationPlan& plan) {
  const size_t n = construct.size();
  if (plan.labels.size() != n || observed.size() != n) {
    throw DataError("improvement_check inputs disagree on length");
  }
  ImprovementCheck rep;
  double err_am = 0.0, err_ob = 0.0;
  long long match_am = 0, match_ob = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!observed[i].has_value() || !plan.usable[i]) continue;
    const int yc = construct[i];
    const int ya = plan.labels[i];
    const int yo = *observed[i];
    ++rep.evaluated;
    err_am += std::abs(yc - ya);
    err_ob += std::abs(yc - yo);
    if (plan.provenance[i] == LabelProvenance::FromDecision) {
      ++rep.in_set;
      match_am += yc == ya ? 1 : 0;
      match_ob += yc == yo ? 1 : 0;
    }
  }
  if (rep.evaluated == 0) throw DataError("no cases with both labels defined");
  rep.mean_err_amalgamated = err_am / static_cast<double>(rep.evaluated);
  rep.mean_err_observed = err_ob / static_cast<double>(rep.evaluated);
  if (rep.in_set > 0) {
    rep.p_match_amalgamated = static_cast<double>(match_am) / static_cast<double>(rep.in_set);
    rep.p_match_observed = static_cast<double>(match_ob) / static_cast<double>(rep.in_set);
    rep.premise_held = rep.p_match_amalgamated >= rep.p_match_observed;
  } else {
    rep.p_match_amalgamated = rep.p_match_observed = 0.0;
    rep.premise_held = true;  // empty set: labels identical, premise vacuous
  }
  rep.conclusion_holds = rep.mean_err_amalgamated <= rep.mean_err_observed + 1e-15;
  return rep;
}

}  // namespace amalgam
