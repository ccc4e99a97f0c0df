#include "amalgam/amalgamation.hpp"
#include "amalgam/evaluation.hpp"
#include "amalgam/predictors.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace amalgam;

namespace {

DecisionDataset tiny_dataset(const std::vector<std::vector<double>>& rows,
                             const std::vector<int>& d,
                             const std::vector<std::optional<int>>& y) {
  DecisionDataset ds;
  const long long n = static_cast<long long>(rows.size());
  const long long m = static_cast<long long>(rows.front().size());
  ds.features.resize(n, m);
  for (long long i = 0; i < n; ++i) {
    for (long long j = 0; j < m; ++j) ds.features(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    ds.decisions.push_back(d[static_cast<size_t>(i)]);
    ds.outcomes.push_back(y[static_cast<size_t>(i)]);
    ds.expert_ids.push_back(1);
    ds.case_ids.push_back(std::to_string(i));
  }
  ds.expert_count = 1;
  ds.expert_names = {"1"};
  for (long long j = 0; j < m; ++j) ds.feature_names.push_back("f" + std::to_string(j));
  return ds;
}

ConsistencyAssignment assignment_of(const std::vector<Membership>& membership) {
  ConsistencyAssignment a;
  a.membership = membership;
  a.metrics.resize(membership.size());
  return a;
}

}  // namespace

TEST_CASE("amalgamated labels follow the decision inside the set") {
  // The canonical flip: outcome 1, decision 0, confidently predicted 0 with
  // the gates passing; the amalgamated label becomes 0.
  DecisionDataset ds = tiny_dataset({{0.1}, {0.2}}, {0, 1}, {1, 0});
  AmalgamationPlan plan =
      amalgamate(ds, assignment_of({Membership::InA0, Membership::Outside}));
  CHECK(plan.labels[0] == 0);
  CHECK(plan.provenance[0] == LabelProvenance::FromDecision);
  CHECK(plan.labels[1] == 0);
  CHECK(plan.provenance[1] == LabelProvenance::FromOutcome);
  CHECK(plan.usable == std::vector<char>{1, 1});
}

TEST_CASE("empty set reproduces outcomes, full set reproduces decisions") {
  DecisionDataset ds = tiny_dataset({{0.0}, {1.0}, {2.0}}, {1, 0, 1}, {0, 1, 1});
  AmalgamationPlan none = amalgamate(
      ds, assignment_of({Membership::Outside, Membership::Outside, Membership::Outside}));
  CHECK(none.labels == std::vector<int>{0, 1, 1});
  CHECK(none.amalgamated_count() == 0);
  AmalgamationPlan all = amalgamate(
      ds, assignment_of({Membership::InA1, Membership::InA0, Membership::InA1}));
  CHECK(all.labels == std::vector<int>{1, 0, 1});
  CHECK(all.amalgamated_count() == 3);
}

TEST_CASE("censored outcomes outside the set are unusable") {
  DecisionDataset ds = tiny_dataset({{0.0}, {1.0}}, {1, 0}, {std::nullopt, std::nullopt});
  AmalgamationPlan plan =
      amalgamate(ds, assignment_of({Membership::InA1, Membership::Outside}));
  CHECK(plan.usable == std::vector<char>{1, 0});
  CHECK(plan.usable_count() == 1);
}

TEST_CASE("asymmetric modes select one direction") {
  DecisionDataset ds = tiny_dataset({{0.0}, {1.0}}, {1, 0}, {0, 1});
  auto assign = assignment_of({Membership::InA1, Membership::InA0});
  AmalgamationPlan pos = amalgamate(ds, assign, AmalgamationMode::PositiveOnly);
  CHECK(pos.provenance[0] == LabelProvenance::FromDecision);
  CHECK(pos.provenance[1] == LabelProvenance::FromOutcome);
  AmalgamationPlan neg = amalgamate(ds, assign, AmalgamationMode::NegativeOnly);
  CHECK(neg.provenance[0] == LabelProvenance::FromOutcome);
  CHECK(neg.provenance[1] == LabelProvenance::FromDecision);
}

TEST_CASE("provenance partitions every case") {
  DecisionDataset ds = tiny_dataset({{0.0}, {1.0}, {2.0}, {3.0}}, {1, 0, 1, 0},
                                    {0, 1, std::nullopt, 1});
  AmalgamationPlan plan = amalgamate(
      ds, assignment_of({Membership::InA1, Membership::Outside, Membership::InA1,
                         Membership::InA0}));
  long long from_decision = 0, from_outcome = 0;
  for (size_t i = 0; i < plan.provenance.size(); ++i) {
    if (plan.provenance[i] == LabelProvenance::FromDecision) ++from_decision;
    else ++from_outcome;
  }
  CHECK(from_decision + from_outcome == 4);
  CHECK(from_decision == 3);
}

namespace {

// Three well-separated clusters. The construct follows the second feature.
// Experts decide confidently (and correctly) in the two clusters they
// understand and flip coins in the third; the observed outcome follows the
// first feature negatively, so outcome-only training learns the wrong axis.
struct ToyWorld {
  DecisionDataset train;
  Matrix fresh;       // oracle sample
  std::vector<int> fresh_construct;
};

ToyWorld toy_world(std::uint64_t seed, long long per_cluster = 120) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.35);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution rare(0.12);
  ToyWorld w;
  const long long n = 3 * per_cluster;
  w.train.features.resize(n, 2);
  auto emit = [&](long long row, double cx, double cy, int construct, int decision,
                  std::optional<int> outcome) {
    w.train.features(row, 0) = cx + gauss(rng);
    w.train.features(row, 1) = cy + gauss(rng);
    w.train.decisions.push_back(decision);
    w.train.outcomes.push_back(outcome);
    w.train.expert_ids.push_back(static_cast<int>(row % 4) + 1);
    w.train.case_ids.push_back(std::to_string(row));
    (void)construct;
  };
  long long row = 0;
  for (long long i = 0; i < per_cluster; ++i) {
    // cluster a: construct positive, experts consistently screen in, the
    // observed outcome confirms (low first feature, high second)
    emit(row++, -1.5, 1.5, 1, 1, 1);
    // cluster b: construct positive, experts consistently screen in, but the
    // observed outcome misses it (high first feature, high second)
    emit(row++, 1.5, 1.5, 1, 1, 0);
    // cluster c: construct negative, experts uncertain; outcome observed on
    // the screened-in half only and noisy
    const int d = coin(rng) ? 1 : 0;
    emit(row++, 1.5, -1.5, 0, d,
         d == 1 ? std::optional<int>(rare(rng) ? 1 : 0) : std::nullopt);
  }
  w.train.expert_count = 4;
  w.train.expert_names = {"1", "2", "3", "4"};
  w.train.feature_names = {"f0", "f1"};
  w.train.validate();

  w.fresh.resize(300, 2);
  std::mt19937_64 rng2(seed + 1);
  std::normal_distribution<double> g2(0.0, 0.35);
  for (long long i = 0; i < 300; ++i) {
    const int c = static_cast<int>(i % 3);
    const double cx = c == 0 ? -1.5 : 1.5;
    const double cy = c == 2 ? -1.5 : 1.5;
    w.fresh(i, 0) = cx + g2(rng2);
    w.fresh(i, 1) = cy + g2(rng2);
    w.fresh_construct.push_back(c == 2 ? 0 : 1);
  }
  return w;
}

double sign_agreement(const CalibratedDecisionModel& model, const Matrix& X,
                      const std::vector<int>& truth) {
  long long agree = 0;
  for (long long i = 0; i < X.rows(); ++i) {
    const int pred = model.predict_proba(X.row(i).transpose()) > 0.5 ? 1 : 0;
    agree += pred == truth[static_cast<size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(agree) / static_cast<double>(X.rows());
}

}  // namespace

TEST_CASE("amalgam training recovers the construct in the toy clusters") {
  ToyWorld w = toy_world(2024);
  ConsistencyParams params;
  params.delta = 0.1;
  params.gamma1 = 1.0;
  params.gamma2 = 0.4;
  params.gamma3 = 1e6;  // probability gate decides in this toy
  FittedStack st = fit_stack(w.train, params, AmalgamationMode::Full, GlmConfig{});

  const double amalgam_agree = sign_agreement(st.amalgam_model, w.fresh, w.fresh_construct);
  CHECK(amalgam_agree >= 0.95);
  REQUIRE(st.outcome_model.has_value());
  const double outcome_agree = sign_agreement(*st.outcome_model, w.fresh, w.fresh_construct);
  CHECK(outcome_agree < 0.95);
}

TEST_CASE("degenerate sets reduce the amalgam model to its counterpart") {
  ToyWorld w = toy_world(7);
  // empty set: the amalgam fit sees exactly the observed-outcome view
  AmalgamationPlan none = amalgamate(
      w.train, assignment_of(std::vector<Membership>(static_cast<size_t>(w.train.rows()),
                                                     Membership::Outside)));
  CalibratedDecisionModel f_none = fit_amalgam_model(w.train, none);
  std::vector<long long> observed;
  for (long long i = 0; i < w.train.rows(); ++i) {
    if (w.train.outcomes[static_cast<size_t>(i)].has_value()) observed.push_back(i);
  }
  Matrix Xo(static_cast<long long>(observed.size()), 2);
  std::vector<int> yo;
  for (size_t r = 0; r < observed.size(); ++r) {
    Xo.row(static_cast<long long>(r)) = w.train.features.row(observed[r]);
    yo.push_back(*w.train.outcomes[static_cast<size_t>(observed[r])]);
  }
  CalibratedDecisionModel f_y = fit_calibrated(Xo, yo, Vector::Ones(Xo.rows()));
  CHECK((f_none.base.theta - f_y.base.theta).norm() < 1e-6);

  // full set: the amalgam fit sees exactly the decision view
  AmalgamationPlan all = amalgamate(
      w.train, assignment_of(std::vector<Membership>(static_cast<size_t>(w.train.rows()),
                                                     Membership::InA1)));
  CalibratedDecisionModel f_all = fit_amalgam_model(w.train, all);
  CalibratedDecisionModel f_h =
      fit_calibrated(w.train.features, w.train.decisions, Vector::Ones(w.train.rows()));
  CHECK((f_all.base.theta - f_h.base.theta).norm() < 1e-6);
}

TEST_CASE("single-class amalgamated labels are rejected") {
  DecisionDataset ds = tiny_dataset({{0.0}, {1.0}, {2.0}}, {1, 1, 1}, {1, 1, 1});
  AmalgamationPlan plan = amalgamate(
      ds, assignment_of({Membership::InA1, Membership::InA1, Membership::InA1}));
  CHECK_THROWS_AS(fit_amalgam_model(ds, plan), DataError);
}

TEST_CASE("hybrid switches between models and deferral abstains on the same rule") {
  ToyWorld w = toy_world(42);
  ConsistencyParams params;
  params.delta = 0.1;
  params.gamma1 = 1.0;
  params.gamma2 = 0.4;
  params.gamma3 = 1e6;
  FittedStack st = fit_stack(w.train, params, AmalgamationMode::Full, GlmConfig{});
  REQUIRE(st.outcome_model.has_value());
  REQUIRE(st.outside_outcome_model.has_value());
  LeveragedPredictor hybrid = LeveragedPredictor::make_hybrid(*st.rule, *st.outcome_model);
  LeveragedPredictor retrained =
      LeveragedPredictor::make_hybrid(*st.rule, *st.outside_outcome_model, true);
  LeveragedPredictor deferral =
      LeveragedPredictor::make_deferral(*st.rule, *st.outside_outcome_model);

  long long members = 0;
  for (long long i = 0; i < w.fresh.rows(); ++i) {
    const Vector x = w.fresh.row(i).transpose();
    const bool in_set = st.rule->contains(x);
    members += in_set;
    Prediction ph = hybrid.predict(x);
    Prediction pr = retrained.predict(x);
    Prediction pd = deferral.predict(x);
    REQUIRE_FALSE(ph.deferred());
    // hybrid answers with the decision model exactly when deferral abstains
    CHECK(pd.deferred() == in_set);
    if (in_set) {
      CHECK(*ph.value == st.decision_model.predict_proba(x));
      CHECK(*pr.value == *ph.value);  // retrained variant agrees inside the set
    } else {
      CHECK(*ph.value == st.outcome_model->predict_proba(x));
      CHECK(*pr.value == st.outside_outcome_model->predict_proba(x));
      CHECK(*pd.value == *pr.value);
    }
  }
  CHECK(members > 0);
  CHECK(members < w.fresh.rows());
}

TEST_CASE("an unreachable membership rule makes deferral answer everywhere") {
  ToyWorld w = toy_world(55);
  ConsistencyParams params;
  params.delta = 0.1;
  params.gamma1 = 1.0;
  params.gamma2 = 0.4;
  params.gamma3 = 1e6;
  FittedStack st = fit_stack(w.train, params, AmalgamationMode::Full, GlmConfig{});
  ConsistencyParams closed;
  closed.delta = 1e-9;  // no probability clears the gate
  closed.gamma1 = 1e9;
  closed.gamma2 = 1.0;
  closed.gamma3.reset();
  MembershipRule never(st.decision_model, st.engine, closed);
  // with an empty set the outside-the-set view is the full observed view
  std::vector<long long> observed;
  for (long long i = 0; i < w.train.rows(); ++i) {
    if (w.train.outcomes[static_cast<size_t>(i)].has_value()) observed.push_back(i);
  }
  Matrix Xo(static_cast<long long>(observed.size()), 2);
  std::vector<int> yo;
  for (size_t r = 0; r < observed.size(); ++r) {
    Xo.row(static_cast<long long>(r)) = w.train.features.row(observed[r]);
    yo.push_back(*w.train.outcomes[static_cast<size_t>(observed[r])]);
  }
  CalibratedDecisionModel f_y = fit_calibrated(Xo, yo, Vector::Ones(Xo.rows()));
  LeveragedPredictor deferral = LeveragedPredictor::make_deferral(never, f_y);
  for (long long i = 0; i < w.fresh.rows(); ++i) {
    const Vector x = w.fresh.row(i).transpose();
    Prediction p = deferral.predict(x);
    REQUIRE_FALSE(p.deferred());
    CHECK(*p.value == f_y.predict_proba(x));
  }
}

TEST_CASE("deferral coverage matches the membership rate on a fresh fold") {
  ToyWorld w = toy_world(77, 200);
  ConsistencyParams params;
  params.delta = 0.1;
  params.gamma1 = 1.0;
  params.gamma2 = 0.4;
  params.gamma3 = 1e6;
  FittedStack st = fit_stack(w.train, params, AmalgamationMode::Full, GlmConfig{});
  long long members = 0, deferred = 0;
  LeveragedPredictor deferral =
      LeveragedPredictor::make_deferral(*st.rule, *st.outside_outcome_model);
  for (long long i = 0; i < w.fresh.rows(); ++i) {
    const Vector x = w.fresh.row(i).transpose();
    members += st.rule->contains(x) ? 1 : 0;
    deferred += deferral.predict(x).deferred() ? 1 : 0;
  }
  const double member_rate = static_cast<double>(members) / static_cast<double>(w.fresh.rows());
  const double coverage = static_cast<double>(deferred) / static_cast<double>(w.fresh.rows());
  CHECK(std::fabs(coverage - member_rate) <= 0.02);
}

TEST_CASE("improvement guarantee holds when the premise holds") {
  std::mt19937_64 rng(123);
  // inside the set the decision matches the construct 95% of the time, the
  // observed label only 60%
  const size_t n = 2000;
  std::vector<int> construct, labels_d;
  std::vector<std::optional<int>> observed;
  AmalgamationPlan plan;
  plan.mode = AmalgamationMode::Full;
  std::bernoulli_distribution in_set(0.4), d_match(0.95), y_match(0.60), coin(0.5);
  for (size_t i = 0; i < n; ++i) {
    const int yc = coin(rng) ? 1 : 0;
    construct.push_back(yc);
    const bool member = in_set(rng);
    const int y = y_match(rng) ? yc : 1 - yc;
    observed.emplace_back(y);
    if (member) {
      plan.labels.push_back(d_match(rng) ? yc : 1 - yc);
      plan.provenance.push_back(LabelProvenance::FromDecision);
    } else {
      plan.labels.push_back(y);
      plan.provenance.push_back(LabelProvenance::FromOutcome);
    }
    plan.usable.push_back(1);
  }
  ImprovementCheck rep = improvement_check(construct, observed, plan);
  REQUIRE(rep.premise_held);
  CHECK(rep.conclusion_holds);
  CHECK(rep.mean_err_amalgamated <= rep.mean_err_observed);
}

TEST_CASE("empty amalgamation set gives identical means") {
  std::vector<int> construct = {1, 0, 1};
  std::vector<std::optional<int>> observed = {1, 1, 0};
  AmalgamationPlan plan;
  plan.labels = {1, 1, 0};
  plan.provenance.assign(3, LabelProvenance::FromOutcome);
  plan.usable.assign(3, 1);
  ImprovementCheck rep = improvement_check(construct, observed, plan);
  CHECK(rep.mean_err_amalgamated == rep.mean_err_observed);
  CHECK(rep.premise_held);  // vacuous
  CHECK(rep.conclusion_holds);
}

TEST_CASE("violated premise is reported without asserting the conclusion") {
  // inside the set the decision is always wrong while the label is right
  std::vector<int> construct = {1, 1, 0, 0};
  std::vector<std::optional<int>> observed = {1, 1, 0, 1};
  AmalgamationPlan plan;
  plan.labels = {0, 0, 0, 1};  // first two amalgamated and wrong
  plan.provenance = {LabelProvenance::FromDecision, LabelProvenance::FromDecision,
                     LabelProvenance::FromOutcome, LabelProvenance::FromOutcome};
  plan.usable.assign(4, 1);
  ImprovementCheck rep = improvement_check(construct, observed, plan);
  CHECK_FALSE(rep.premise_held);
  CHECK_FALSE(rep.conclusion_holds);
}
