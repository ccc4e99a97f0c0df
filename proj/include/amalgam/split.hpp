#pragma once

#include "amalgam/common.hpp"
#include "amalgam/dataset.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace amalgam {

// Train/test index split with guaranteed expert representation on both sides.
struct SplitPlan {
  std::vector<long long> train_indices;
  std::vector<long long> test_indices;
  std::uint64_t seed = 0;
  double train_fraction = 0.0;

  void check(const DecisionDataset& ds) const {
    std::vector<char> mark(static_cast<size_t>(ds.rows()), 0);
    for (long long i : train_indices) mark[static_cast<size_t>(i)] += 1;
    for (long long i : test_indices) mark[static_cast<size_t>(i)] += 1;
    for (char m : mark) {
      if (m != 1) throw DataError("split does not cover each case exactly once");
    }
    std::vector<char> in_train(static_cast<size_t>(ds.expert_count), 0);
    std::vector<char> in_test(static_cast<size_t>(ds.expert_count), 0);
    for (long long i : train_indices) in_train[static_cast<size_t>(ds.expert_ids[static_cast<size_t>(i)] - 1)] = 1;
    for (long long i : test_indices) in_test[static_cast<size_t>(ds.expert_ids[static_cast<size_t>(i)] - 1)] = 1;
    for (int h = 0; h < ds.expert_count; ++h) {
      if (!in_train[static_cast<size_t>(h)] || !in_test[static_cast<size_t>(h)]) {
        throw DataError("expert " + ds.expert_names[static_cast<size_t>(h)] +
                        " lost representation in a fold");
      }
    }
  }
};

namespace detail {

// Moves one case of expert h (the one with the lowest case id) from `from`
// to `to`, carrying its whole linkage group when linkage keys are present.
inline void move_expert_case(const DecisionDataset& ds, int h,
                             std::vector<long long>& from, std::vector<long long>& to) {
  long long best = -1;
  for (long long i : from) {
    if (ds.expert_ids[static_cast<size_t>(i)] != h) continue;
    if (best < 0 || case_id_less(ds.case_ids[static_cast<size_t>(i)],
                                 ds.case_ids[static_cast<size_t>(best)])) {
      best = i;
    }
  }
  if (best < 0) {
    throw DataError("expert " + ds.expert_names[static_cast<size_t>(h - 1)] +
                    " has no movable case; needs at least 2 cases");
  }
  std::vector<long long> moving;
  if (!ds.linkage.empty()) {
    const std::string& key = ds.linkage[static_cast<size_t>(best)];
    for (long long i : from) {
      if (ds.linkage[static_cast<size_t>(i)] == key) moving.push_back(i);
    }
  } else {
    moving.push_back(best);
  }
  for (long long i : moving) {
    from.erase(std::find(from.begin(), from.end(), i));
    to.push_back(i);
  }
}

}  // namespace detail

// Random train/test split, deterministic given (seed, dataset). Rows sharing a
// linkage key land in the same fold; afterwards any expert absent from a fold
// is repaired by moving their lowest-case-id case across.
inline SplitPlan monte_carlo_split(const DecisionDataset& ds, double train_fraction,
                                   std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("train_fraction must lie in (0,1), got " + format_double(train_fraction));
  }
  const long long n = ds.rows();
  std::vector<long long> per_expert(static_cast<size_t>(ds.expert_count), 0);
  for (int e : ds.expert_ids) per_expert[static_cast<size_t>(e - 1)]++;
  for (int h = 0; h < ds.expert_count; ++h) {
    if (per_expert[static_cast<size_t>(h)] < 2) {
      throw DataError("expert " + ds.expert_names[static_cast<size_t>(h)] +
                      " has a single case; cannot appear in both folds");
    }
  }

  std::mt19937_64 rng(seed);
  SplitPlan plan;
  plan.seed = seed;
  plan.train_fraction = train_fraction;

  if (!ds.linkage.empty()) {
    std::map<std::string, std::vector<long long>> groups;
    for (long long i = 0; i < n; ++i) groups[ds.linkage[static_cast<size_t>(i)]].push_back(i);
    std::vector<const std::vector<long long>*> order;
    order.reserve(groups.size());
    for (const auto& [k, v] : groups) order.push_back(&v);
    std::shuffle(order.begin(), order.end(), rng);
    const long long target = std::llround(train_fraction * static_cast<double>(n));
    long long placed = 0;
    for (const auto* g : order) {
      auto& dest = (placed < target) ? plan.train_indices : plan.test_indices;
      for (long long i : *g) dest.push_back(i);
      if (placed < target) placed += static_cast<long long>(g->size());
    }
  } else {
    std::vector<long long> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const long long ntrain = std::llround(train_fraction * static_cast<double>(n));
    plan.train_indices.assign(idx.begin(), idx.begin() + ntrain);
    plan.test_indices.assign(idx.begin() + ntrain, idx.end());
  }
  if (plan.train_indices.empty()) detail::move_expert_case(ds, ds.expert_ids[static_cast<size_t>(plan.test_indices.front())], plan.test_indices, plan.train_indices);
  if (plan.test_indices.empty()) detail::move_expert_case(ds, ds.expert_ids[static_cast<size_t>(plan.train_indices.front())], plan.train_indices, plan.test_indices);

  // Representation repair, deterministic order over experts.
  for (int h = 1; h <= ds.expert_count; ++h) {
    auto contains = [&](const std::vector<long long>& fold) {
      for (long long i : fold) {
        if (ds.expert_ids[static_cast<size_t>(i)] == h) return true;
      }
      return false;
    };
    if (!contains(plan.train_indices)) detail::move_expert_case(ds, h, plan.test_indices, plan.train_indices);
    if (!contains(plan.test_indices)) detail::move_expert_case(ds, h, plan.train_indices, plan.test_indices);
  }
  std::sort(plan.train_indices.begin(), plan.train_indices.end());
  std::sort(plan.test_indices.begin(), plan.test_indices.end());
  plan.check(ds);
  return plan;
}

}  // namespace amalgam
