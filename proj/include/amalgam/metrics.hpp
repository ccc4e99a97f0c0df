#pragma once

#include "amalgam/common.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace amalgam {

namespace detail {

inline void check_scores_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DataError("scores/labels length mismatch");
  if (scores.empty()) throw DataError("empty score vector");
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be binary 0/1");
  }
}

}  // namespace detail

// Probability that a random positive outranks a random negative, ties counted
// half. Rank-statistic implementation; agrees exactly with the O(n^2)
// pairwise count because both reduce to the same half-integer numerator.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  detail::check_scores_labels(scores, labels);
  const size_t n = scores.size();
  long long npos = 0;
  for (int y : labels) npos += y;
  const long long nneg = static_cast<long long>(n) - npos;
  if (npos == 0 || nneg == 0) throw DataError("AUC needs both classes present");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // twice the sum of positive ranks, exact in integers (average tie ranks are
  // half-integers).
  long long two_rank_sum = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const long long two_avg_rank = static_cast<long long>(i + 1) + static_cast<long long>(j);
    for (size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) two_rank_sum += two_avg_rank;
    }
    i = j;
  }
  const long long two_numerator = two_rank_sum - npos * (npos + 1);
  return static_cast<double>(two_numerator) / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

// Threshold placing `rate` of the mass strictly below: returns the set of row
// indices predicted negative (the lowest floor(rate*n) scores, ties resolved
// toward the lowest row index).
inline std::vector<size_t> screened_out_indices(const std::vector<double>& scores, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw DataError("screen-out rate must lie in (0,1)");
  const size_t n = scores.size();
  const size_t cut = static_cast<size_t>(rate * static_cast<double>(n) + 1e-9);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  order.resize(cut);
  return order;
}

// Score value separating the bottom `rate` fraction; predictions strictly
// above it count as selected.
inline double threshold_at_screenout(const std::vector<double>& scores, double rate) {
  if (scores.empty()) throw DataError("empty score vector");
  if (!(rate > 0.0 && rate < 1.0)) throw DataError("screen-out rate must lie in (0,1)");
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const size_t cut = static_cast<size_t>(rate * static_cast<double>(sorted.size()) + 1e-9);
  if (cut == 0) return -std::numeric_limits<double>::infinity();
  return sorted[cut - 1];
}

// True negative rate within a group at a fixed screen-out rate: the fraction
// of the group's true negatives that land in the screened-out (lowest-scored)
// slice of the whole population.
inline double tnr_at_screenout(const std::vector<double>& scores, const std::vector<int>& labels,
                               const std::vector<int>& group_mask, double screenout_rate) {
  detail::check_scores_labels(scores, labels);
  if (group_mask.size() != scores.size()) throw DataError("group mask length mismatch");
  std::vector<char> negative_pred(scores.size(), 0);
  for (size_t i : screened_out_indices(scores, screenout_rate)) negative_pred[i] = 1;
  long long tn = 0, negs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (group_mask[i] != 1 || labels[i] != 0) continue;
    ++negs;
    tn += negative_pred[i];
  }
  if (negs == 0) throw DataError("group has no true negatives");
  return static_cast<double>(tn) / static_cast<double>(negs);
}

// Precision over the ceil(p * eligible) highest-scored eligible cases.
inline double precision_at_top(const std::vector<double>& scores, const std::vector<int>& labels,
                               double p, const std::vector<char>* restrict_mask = nullptr) {
  detail::check_scores_labels(scores, labels);
  if (!(p > 0.0 && p <= 1.0)) throw DataError("p must lie in (0,1]");
  std::vector<size_t> eligible;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!restrict_mask || (*restrict_mask)[i]) eligible.push_back(i);
  }
  if (eligible.empty()) throw DataError("no eligible cases for precision");
  std::stable_sort(eligible.begin(), eligible.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  const size_t take = static_cast<size_t>(
      std::ceil(p * static_cast<double>(eligible.size()) - 1e-12));
  long long pos = 0;
  for (size_t t = 0; t < take; ++t) pos += labels[eligible[t]];
  return static_cast<double>(pos) / static_cast<double>(take);
}

// Difference in selection rates (score strictly above tau) between the group
// and its complement.
inline double dem_parity_gap(const std::vector<double>& scores, const std::vector<int>& group_mask,
                             double tau) {
  if (scores.size() != group_mask.size()) throw DataError("group mask length mismatch");
  long long g = 0, gsel = 0, c = 0, csel = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (group_mask[i] == 1) {
      ++g;
      gsel += scores[i] > tau ? 1 : 0;
    } else {
      ++c;
      csel += scores[i] > tau ? 1 : 0;
    }
  }
  if (g == 0 || c == 0) throw DataError("demographic parity needs both groups present");
  return static_cast<double>(gsel) / static_cast<double>(g) -
         static_cast<double>(csel) / static_cast<double>(c);
}

// Shift in the demographic parity gap between two models; thresholds may
// differ to compare at a fixed selection rate.
inline double gap_shift(const std::vector<double>& scores_a, double tau_a,
                        const std::vector<double>& scores_y, double tau_y,
                        const std::vector<int>& group_mask) {
  return dem_parity_gap(scores_a, group_mask, tau_a) - dem_parity_gap(scores_y, group_mask, tau_y);
}

}  // namespace amalgam
