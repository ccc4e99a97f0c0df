#pragma once

#include "amalgam/common.hpp"
#include "amalgam/amalgamation.hpp"
#include "amalgam/calibration.hpp"
#include "amalgam/consistency.hpp"
#include "amalgam/influence.hpp"

#include <memory>
#include <optional>
#include <utility>

namespace amalgam {

// Prediction-time consistency membership: probability-threshold gate on the
// calibrated decision model plus the influence gate, both evaluated against
// the training-fitted engine. No observed decision is needed.
class MembershipRule {
 public:
  MembershipRule(CalibratedDecisionModel model_h, std::shared_ptr<const InfluenceEngine> engine,
                 ConsistencyParams params, AmalgamationMode mode = AmalgamationMode::Full)
      : model_h_(std::move(model_h)), engine_(std::move(engine)), params_(params), mode_(mode) {
    params_.check();
  }

  Membership membership(const Vector& x) const {
    const double p = model_h_.predict_proba(x);
    const bool prob_gate = (p < params_.delta) || (p > 1.0 - params_.delta);
    if (!prob_gate) return Membership::Outside;
    const InfluenceProfile prof = engine_->profile(x);
    CaseMetrics cm{prof.m1, prof.m2, prof.m3, p};
    if (!influence_gate(cm, params_)) return Membership::Outside;
    return p < 0.5 ? Membership::InA0 : Membership::InA1;
  }

  bool contains(const Vector& x) const {
    return in_selected_set(membership(x), mode_);
  }

  const CalibratedDecisionModel& decision_model() const { return model_h_; }
  const ConsistencyParams& params() const { return params_; }
  AmalgamationMode mode() const { return mode_; }

 private:
  CalibratedDecisionModel model_h_;
  std::shared_ptr<const InfluenceEngine> engine_;
  ConsistencyParams params_;
  AmalgamationMode mode_;
};

// Either a probability or the explicit defer marker.
struct Prediction {
  std::optional<double> value;  // nullopt = defer
  bool deferred() const { return !value.has_value(); }
  static Prediction defer() { return Prediction{}; }
  static Prediction of(double p) { return Prediction{p}; }
};

enum class PredictorKind { Amalgam, Hybrid, RetrainedHybrid, Deferral };

// The three ways of leveraging inferred consistency. Amalgam needs no
// membership rule at prediction time; hybrid and deferral switch on it.
class LeveragedPredictor {
 public:
  static LeveragedPredictor make_amalgam(CalibratedDecisionModel amalgam_model) {
    LeveragedPredictor p;
    p.kind_ = PredictorKind::Amalgam;
    p.primary_ = std::move(amalgam_model);
    return p;
  }

  // Hybrid: decision model inside the set, outcome model outside. The
  // retrained variant uses the outside-the-set outcome model instead.
  static LeveragedPredictor make_hybrid(MembershipRule rule, CalibratedDecisionModel outcome_model,
                                        bool retrained = false) {
    LeveragedPredictor p;
    p.kind_ = retrained ? PredictorKind::RetrainedHybrid : PredictorKind::Hybrid;
    p.rule_ = std::move(rule);
    p.primary_ = std::move(outcome_model);
    return p;
  }

  static LeveragedPredictor make_deferral(MembershipRule rule,
                                          CalibratedDecisionModel outside_outcome_model) {
    LeveragedPredictor p;
    p.kind_ = PredictorKind::Deferral;
    p.rule_ = std::move(rule);
    p.primary_ = std::move(outside_outcome_model);
    return p;
  }

  PredictorKind kind() const { return kind_; }
  const std::optional<MembershipRule>& rule() const { return rule_; }
  const CalibratedDecisionModel& primary_model() const { return primary_; }

  Prediction predict(const Vector& x) const {
    switch (kind_) {
      case PredictorKind::Amalgam:
        return Prediction::of(primary_.predict_proba(x));
      case PredictorKind::Hybrid:
      case PredictorKind::RetrainedHybrid:
        if (rule_->contains(x)) {
          return Prediction::of(rule_->decision_model().predict_proba(x));
        }
        return Prediction::of(primary_.predict_proba(x));
      case PredictorKind::Deferral:
        if (rule_->contains(x)) return Prediction::defer();
        return Prediction::of(primary_.predict_proba(x));
    }
    throw NumericError("unreachable predictor kind");
  }

 private:
  PredictorKind kind_ = PredictorKind::Amalgam;
  std::optional<MembershipRule> rule_;
  CalibratedDecisionModel primary_;
};

}  // namespace amalgam
