#pragma once

#include "amalgam/common.hpp"
#include "amalgam/calibration.hpp"
#include "amalgam/influence.hpp"

#include <optional>
#include <string>
#include <vector>

namespace amalgam {

// Gate parameters for the inferred high-consistency set. gamma3 is optional:
// disabled means the negligible-influence branch never fires. All comparisons
// are strict.
struct ConsistencyParams {
  double delta = 0.05;
  double gamma1 = 0.0;                 // center-of-mass floor
  double gamma2 = 1.0;                 // aligned-influence floor
  std::optional<double> gamma3;        // negligible-influence ceiling; nullopt = off

  void check() const {
    if (!(delta > 0.0 && delta < 0.5)) throw DataError("delta must lie in (0, 0.5)");
    if (gamma1 < 0.0) throw DataError("gamma1 must be nonnegative");
    if (!(gamma2 >= 0.0 && gamma2 <= 1.0)) throw DataError("gamma2 must lie in [0,1]");
    if (gamma3.has_value() && !(*gamma3 > 0.0)) throw DataError("gamma3 must be positive");
  }

  // Conservative off-the-shelf defaults for k experts: gamma1 = floor(k/2),
  // gamma2 = 1, negligible-influence branch off.
  static ConsistencyParams conservative(int expert_count, double delta = 0.05) {
    ConsistencyParams p;
    p.delta = delta;
    p.gamma1 = static_cast<double>(expert_count / 2);
    p.gamma2 = 1.0;
    p.gamma3.reset();
    return p;
  }
};

enum class Membership { InA0, InA1, Outside };

inline const char* membership_name(Membership m) {
  switch (m) {
    case Membership::InA0: return "A0";
    case Membership::InA1: return "A1";
    default: return "outside";
  }
}

struct CaseMetrics {
  double m1 = 0.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double probability = 0.0;
};

struct ConsistencyAssignment {
  std::vector<Membership> membership;
  ConsistencyParams params_used;
  std::vector<CaseMetrics> metrics;
  bool training_mode = false;  // probability gate used |p - d| < delta

  long long count(Membership m) const {
    long long c = 0;
    for (Membership v : membership)
      if (v == m) ++c;
    return c;
  }
  double member_fraction() const {
    if (membership.empty()) return 0.0;
    return static_cast<double>(count(Membership::InA0) + count(Membership::InA1)) /
           static_cast<double>(membership.size());
  }
};

// Influence gate shared by both modes: (m1 > g1 and m2 > g2) or m3 < g3.
// NaN metrics fail their comparisons, so all-zero influence admits via the
// m3 branch only.
inline bool influence_gate(const CaseMetrics& m, const ConsistencyParams& p) {
  const bool spread = (m.m1 > p.gamma1) && (m.m2 > p.gamma2);
  const bool negligible = p.gamma3.has_value() && (m.m3 < *p.gamma3);
  return spread || negligible;
}

// Membership of each case in the inferred high-consistency set. With
// decisions present (training time) the probability gate is |p - d| < delta;
// without them (prediction time) it is p < delta or p > 1 - delta. Direction
// always comes from the probability side.
inline ConsistencyAssignment build_consistency_set(
    const CalibratedDecisionModel& model_h, const Matrix& X,
    const std::vector<InfluenceProfile>& profiles, const ConsistencyParams& params,
    const std::vector<int>* decisions = nullptr) {
  params.check();
  const long long n = X.rows();
  if (static_cast<long long>(profiles.size()) != n) {
    throw DataError("profiles and cases disagree on count");
  }
  if (decisions && static_cast<long long>(decisions->size()) != n) {
    throw DataError("decisions and cases disagree on count");
  }
  ConsistencyAssignment out;
  out.params_used = params;
  out.training_mode = decisions != nullptr;
  out.membership.resize(static_cast<size_t>(n), Membership::Outside);
  out.metrics.resize(static_cast<size_t>(n));
  const Vector probs = model_h.predict_proba_all(X);
  for (long long i = 0; i < n; ++i) {
    const size_t si = static_cast<size_t>(i);
    const double p = probs(i);
    CaseMetrics cm;
    cm.m1 = profiles[si].m1;
    cm.m2 = profiles[si].m2;
    cm.m3 = profiles[si].m3;
    cm.probability = p;
    out.metrics[si] = cm;
    bool prob_gate;
    if (decisions) {
      prob_gate = std::fabs(p - static_cast<double>((*decisions)[si])) < params.delta;
    } else {
      prob_gate = (p < params.delta) || (p > 1.0 - params.delta);
    }
    if (prob_gate && influence_gate(cm, params)) {
      out.membership[si] = p < 0.5 ? Membership::InA0 : Membership::InA1;
    }
  }
  return out;
}

// Lower end of the confidence interval for the agreement rate
// inside a consistency direction: 1 - delta - z* sigma / sqrt(set size), with
// z* = Phi^-1(1 - alpha/2) and alpha = (1 - confidence)/2.
inline double agreement_lower_bound(double delta, double sigma, long long set_size,
                                   double confidence) {
  if (set_size < 1) throw DataError("set_size must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw DataError("confidence must lie in (0,1)");
  if (sigma < 0.0) throw DataError("sigma must be nonnegative");
  const double alpha = (1.0 - confidence) / 2.0;
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return 1.0 - delta - z * sigma / std::sqrt(static_cast<double>(set_size));
}

struct DirectionValidation {
  std::string direction;      // "A0" or "A1"
  long long size = 0;
  bool validatable = false;
  double agreement_rate = 0.0;
  double sigma = 0.0;
  double lower_bound = 0.0;
  bool passed = false;
};

struct ValidationReport {
  DirectionValidation a0;
  DirectionValidation a1;
  double confidence = 0.0;
  bool all_passed() const {
    bool ok = true;
    if (a0.validatable) ok = ok && a0.passed;
    if (a1.validatable) ok = ok && a1.passed;
    return ok;
  }
};

// Recomputes prediction-time membership on a holdout fold and checks the
// empirical decision-agreement rate per direction against the confidence
// lower bound. Empty directions are reported unvalidatable, not failed.
inline ValidationReport validate_consistency(const CalibratedDecisionModel& model_h,
                                             const Matrix& X_holdout,
                                             const std::vector<int>& decisions_holdout,
                                             const std::vector<InfluenceProfile>& profiles,
                                             const ConsistencyParams& params,
                                             double confidence) {
  ConsistencyAssignment assign =
      build_consistency_set(model_h, X_holdout, profiles, params, nullptr);
  ValidationReport report;
  report.confidence = confidence;
  auto eval_dir = [&](Membership dir, int agree_value) {
    DirectionValidation dv;
    dv.direction = dir == Membership::InA0 ? "A0" : "A1";
    std::vector<int> agreements;
    for (size_t i = 0; i < assign.membership.size(); ++i) {
      if (assign.membership[i] == dir) {
        agreements.push_back(decisions_holdout[i] == agree_value ? 1 : 0);
      }
    }
    dv.size = static_cast<long long>(agreements.size());
    if (dv.size == 0) {
      dv.validatable = false;
      return dv;
    }
    dv.validatable = true;
    double mean = 0.0;
    for (int a : agreements) mean += a;
    mean /= static_cast<double>(dv.size);
    double var = 0.0;
    for (int a : agreements) var += (a - mean) * (a - mean);
    var /= static_cast<double>(dv.size);
    dv.agreement_rate = mean;
    dv.sigma = std::sqrt(var);
    dv.lower_bound = agreement_lower_bound(params.delta, dv.sigma, dv.size, confidence);
    dv.passed = dv.agreement_rate >= dv.lower_bound;
    return dv;
  };
  report.a0 = eval_dir(Membership::InA0, 0);
  report.a1 = eval_dir(Membership::InA1, 1);
  return report;
}

}  // namespace amalgam
