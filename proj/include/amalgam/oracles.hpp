#pragma once

#include "amalgam/common.hpp"
#include "amalgam/glm.hpp"

#include <random>
#include <string>
#include <vector>

namespace amalgam {

// Brute-force reference implementations. Slow by design and independent of
// the production paths they check; shipped in the library so reported values
// stay reproducible by consumers.
struct OracleResult {
  double value = 0.0;
  std::string method;
  long long cost = 0;  // rough operation count
};

// Refits the model with expert h upweighted by eps and differences the query
// probability: [f_perturbed(x) - f_base(x)] / (eps * expert weight mass).
inline OracleResult retraining_influence_oracle(const Matrix& X, const std::vector<int>& decisions,
                                                const std::vector<int>& expert_ids, int expert,
                                                const Vector& x_query, double eps, double ridge,
                                                double tol = 1e-10) {
  if (eps == 0.0) throw DataError("retraining oracle needs eps != 0");
  const long long n = X.rows();
  GlmConfig cfg;
  cfg.tol = tol;
  cfg.max_iter = 300;
  Vector w_base = Vector::Ones(n);
  Vector w_pert = Vector::Ones(n);
  double mass = 0.0;
  for (long long i = 0; i < n; ++i) {
    if (expert_ids[static_cast<size_t>(i)] == expert) {
      w_pert(i) = 1.0 + eps;
      mass += 1.0;
    }
  }
  if (mass == 0.0) throw DataError("expert " + std::to_string(expert) + " has no cases");
  const WeightedLogisticModel base = fit(X, decisions, w_base, ridge, cfg);
  const WeightedLogisticModel pert = fit(X, decisions, w_pert, ridge, cfg);
  OracleResult r;
  r.value = (sigmoid(pert.logit(x_query)) - sigmoid(base.logit(x_query))) / (eps * mass);
  r.method = "epsilon-retraining finite difference, eps " + format_double(eps);
  r.cost = 2 * n;
  return r;
}

// O(n^2) concordant-pair count with half credit for ties.
inline OracleResult pairwise_auc_oracle(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DataError("scores/labels length mismatch");
  long long two_credit = 0;
  long long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) two_credit += 2;
      else if (scores[i] == scores[j]) two_credit += 1;
    }
  }
  if (pairs == 0) throw DataError("AUC oracle needs both classes present");
  OracleResult r;
  r.value = static_cast<double>(two_credit) / (2.0 * static_cast<double>(pairs));
  r.method = "exhaustive pairwise concordance";
  r.cost = pairs;
  return r;
}

// Inverse standard normal CDF via bisection on erfc, to 1e-10. Independent of
// the closed-form rational approximation used in production.
inline OracleResult inverse_normal_oracle(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DataError("inverse normal oracle needs p in (0,1)");
  double lo = -40.0, hi = 40.0;
  long long steps = 0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) lo = mid;
    else hi = mid;
    ++steps;
  }
  OracleResult r;
  r.value = 0.5 * (lo + hi);
  r.method = "bisection on erfc";
  r.cost = steps;
  return r;
}

// Monte-Carlo coverage of the consistency lower bound: simulates Bernoulli
// samples at true_rate and returns the fraction of trials whose empirical
// rate stays at or above 1 - delta - z* s / sqrt(size).
inline OracleResult ci_coverage_oracle(double delta, double true_rate, long long set_size,
                                       double confidence, long long trials,
                                       std::uint64_t seed = 12345) {
  if (set_size < 1 || trials < 1) throw DataError("coverage oracle needs positive sizes");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution draw(true_rate);
  const double z = inverse_normal_oracle(1.0 - (1.0 - confidence) / 4.0).value;
  long long covered = 0;
  for (long long t = 0; t < trials; ++t) {
    long long ones = 0;
    for (long long i = 0; i < set_size; ++i) ones += draw(rng) ? 1 : 0;
    const double mean = static_cast<double>(ones) / static_cast<double>(set_size);
    // smoothed variance keeps the width nonzero for degenerate draws
    const double p_smooth =
        (static_cast<double>(ones) + 1.0) / (static_cast<double>(set_size) + 2.0);
    const double var = p_smooth * (1.0 - p_smooth);
    const double bound = 1.0 - delta - z * std::sqrt(var / static_cast<double>(set_size));
    if (mean >= bound) ++covered;
  }
  OracleResult r;
  r.value = static_cast<double>(covered) / static_cast<double>(trials);
  r.method = "Bernoulli simulation of the agreement bound";
  r.cost = trials * set_size;
  return r;
}

}  // namespace amalgam
