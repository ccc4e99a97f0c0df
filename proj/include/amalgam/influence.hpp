#pragma once

#include "amalgam/common.hpp"
#include "amalgam/glm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace amalgam {

// Units for per-expert influence values.
//   PerUnitWeight: derivative of the query probability w.r.t. epsilon in the
//     per-case upweighting w_i = 1 + eps of one expert, divided by the
//     expert's weight mass. Matches the epsilon-retraining oracle directly;
//     values shrink like 1/n as the training set grows.
//   PerMeanRisk: the same derivative expressed against the mean (1/n-scaled)
//     risk, i.e. multiplied by the total weight mass. Values are invariant to
//     the training-set size, which is what fixed gate thresholds such as the
//     negligible-influence ceiling assume.
enum class InfluenceScale { PerUnitWeight, PerMeanRisk };

// Per-query influence summary: signed per-expert values, the query
// probability of class 1, the descending sort of absolute influences, and the
// three consistency metrics. m1 and m2 are NaN when all influences vanish;
// the negligible-influence path governs that case.
struct InfluenceProfile {
  Vector per_expert;               // length k
  double query_prob = 0.0;         // uncalibrated base-model probability
  std::vector<double> sorted_abs;  // descending
  double m1 = 0.0;
  double m2 = 0.0;
  double m3 = 0.0;
};

// Rank-weighted mean of the sorted absolute influences (1-based ranks).
// Values near 1 mean a single expert dominates; (k+1)/2 means even spread.
inline double center_of_mass(const InfluenceProfile& p) {
  double total = 0.0, weighted = 0.0;
  for (size_t j = 0; j < p.sorted_abs.size(); ++j) {
    total += p.sorted_abs[j];
    weighted += static_cast<double>(j + 1) * p.sorted_abs[j];
  }
  if (total <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return weighted / total;
}

// Fraction of absolute influence mass pushing in the predicted direction,
// with the aligned set C = {h : I_h * (prob - 0.5) > 0}. A query probability
// of exactly 0.5 empties C by the strict inequality, giving 0.
inline double aligned_influence(const InfluenceProfile& p) {
  double total = 0.0, aligned = 0.0;
  const double dir = p.query_prob - 0.5;
  for (long long h = 0; h < p.per_expert.size(); ++h) {
    const double v = p.per_expert(h);
    total += std::fabs(v);
    if (v * dir > 0.0) aligned += std::fabs(v);
  }
  if (total <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return aligned / total;
}

// Largest absolute per-expert influence. Below an arbitrarily small ceiling,
// no single-expert reweighting can move the prediction.
inline double negligible_influence(const InfluenceProfile& p) {
  return p.sorted_abs.empty() ? 0.0 : p.sorted_abs.front();
}

inline void finalize_profile(InfluenceProfile& p) {
  const long long k = p.per_expert.size();
  std::vector<std::pair<double, long long>> order(static_cast<size_t>(k));
  for (long long h = 0; h < k; ++h) {
    order[static_cast<size_t>(h)] = {std::fabs(p.per_expert(h)), h};
  }
  // descending by magnitude, ties broken by ascending expert id
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  p.sorted_abs.resize(static_cast<size_t>(k));
  for (long long j = 0; j < k; ++j) p.sorted_abs[static_cast<size_t>(j)] = order[static_cast<size_t>(j)].first;
  p.m1 = center_of_mass(p);
  p.m2 = aligned_influence(p);
  p.m3 = negligible_influence(p);
}

// Precomputes everything query-independent for expert influence: the Cholesky
// factor of the penalized Hessian at the fitted optimum and, per expert, the
// Hessian-solved sum of per-case loss gradients. A query then costs O(k m).
class InfluenceEngine {
 public:
  InfluenceEngine(const WeightedLogisticModel& model, const Matrix& X,
                  const std::vector<int>& decisions, const std::vector<int>& expert_ids,
                  int expert_count, const Vector& weights,
                  InfluenceScale scale = InfluenceScale::PerMeanRisk)
      : theta_(model.theta), feature_count_(model.feature_count), scale_(scale) {
    if (X.cols() != model.feature_count) throw DataError("feature count mismatch");
    if (X.rows() != static_cast<long long>(decisions.size()) ||
        X.rows() != static_cast<long long>(expert_ids.size()) || X.rows() != weights.size()) {
      throw DataError("training arrays disagree on the number of rows");
    }
    const long long n = X.rows();
    const long long m = X.cols();
    expert_count_ = expert_count;
    mass_.assign(static_cast<size_t>(expert_count), 0.0);
    total_mass_ = 0.0;

    Matrix grad_sums = Matrix::Zero(m + 1, expert_count);
    Vector z = (X * theta_.head(m)).array() + theta_(m);
    for (long long i = 0; i < n; ++i) {
      const int h = expert_ids[static_cast<size_t>(i)];
      if (h < 1 || h > expert_count) throw DataError("expert id out of range");
      const double w = weights(i);
      const double r = w * (sigmoid(z(i)) - static_cast<double>(decisions[static_cast<size_t>(i)]));
      grad_sums.col(h - 1).head(m) += r * X.row(i).transpose();
      grad_sums(m, h - 1) += r;
      mass_[static_cast<size_t>(h - 1)] += w;
      total_mass_ += w;
    }
    for (int h = 0; h < expert_count; ++h) {
      if (mass_[static_cast<size_t>(h)] <= 0.0) {
        throw DataError("expert " + std::to_string(h + 1) + " has no weight mass");
      }
    }
    Matrix H = risk_hessian(model, X, decisions, weights);
    Eigen::LDLT<Matrix> ldlt(H);
    if (ldlt.info() != Eigen::Success) {
      throw NumericError("penalized Hessian factorization failed; use ensure_invertible_fit");
    }
    solved_ = ldlt.solve(grad_sums);  // (m+1) x k
    // one step of iterative refinement keeps ill-conditioned solves honest
    solved_ += ldlt.solve(grad_sums - H * solved_);
    const Matrix residual = H * solved_ - grad_sums;
    if (residual.norm() > 1e-6 * (1.0 + grad_sums.norm())) {
      throw NumericError("Hessian solve inaccurate; matrix close to singular");
    }
  }

  int expert_count() const { return expert_count_; }
  double expert_mass(int h) const { return mass_.at(static_cast<size_t>(h - 1)); }
  double total_mass() const { return total_mass_; }
  InfluenceScale scale() const { return scale_; }

  InfluenceProfile profile(const Vector& x_query) const {
    if (x_query.size() != feature_count_) throw DataError("query dimension mismatch");
    const long long m = feature_count_;
    const double s = sigmoid(theta_.head(m).dot(x_query) + theta_(m));
    Vector grad_p(m + 1);
    grad_p.head(m) = s * (1.0 - s) * x_query;
    grad_p(m) = s * (1.0 - s);

    InfluenceProfile p;
    p.query_prob = s;
    p.per_expert.resize(expert_count_);
    const double scale_factor = scale_ == InfluenceScale::PerMeanRisk ? total_mass_ : 1.0;
    for (int h = 0; h < expert_count_; ++h) {
      const double raw = grad_p.dot(solved_.col(h));
      p.per_expert(h) = -scale_factor / mass_[static_cast<size_t>(h)] * raw;
    }
    finalize_profile(p);
    return p;
  }

 private:
  Vector theta_;
  long long feature_count_;
  InfluenceScale scale_;
  int expert_count_ = 0;
  std::vector<double> mass_;
  double total_mass_ = 0.0;
  Matrix solved_;  // H^{-1} * per-expert gradient sums
};

}  // namespace amalgam
