#pragma once

#include "amalgam/common.hpp"
#include "amalgam/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace amalgam {

// Expert-behavior regimes. The first three corrupt decisions on a hard
// subgroup; the last four inject decision bias against a minority group.
enum class Scenario { CHo, CIHo, CIHe, DeP, HoF, nRnD, DeS };

inline bool is_bias_scenario(Scenario s) {
  return s == Scenario::DeP || s == Scenario::HoF || s == Scenario::nRnD || s == Scenario::DeS;
}

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::CHo: return "CHo";
    case Scenario::CIHo: return "CIHo";
    case Scenario::CIHe: return "CIHe";
    case Scenario::DeP: return "DeP";
    case Scenario::HoF: return "HoF";
    case Scenario::nRnD: return "nRnD";
    case Scenario::DeS: return "DeS";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& name) {
  if (name == "CHo") return Scenario::CHo;
  if (name == "CIHo") return Scenario::CIHo;
  if (name == "CIHe") return Scenario::CIHe;
  if (name == "DeP") return Scenario::DeP;
  if (name == "HoF") return Scenario::HoF;
  if (name == "nRnD") return Scenario::nRnD;
  if (name == "DeS") return Scenario::DeS;
  throw UsageError("unknown scenario '" + name +
                   "' (expected CHo, CIHo, CIHe, DeP, HoF, nRnD or DeS)");
}

// Generator configuration. The synthetic world has two latent needs. The
// severity component drives the observed outcome; its covariate is a noisy
// proxy, so near-threshold severity is ambiguous to any model. The secondary
// component is a two-state trait (think recorded age band or reported pain)
// whose covariate score is bimodal: the upper component is identifiable with
// near certainty while the components' spread still injects continuous noise.
// The outcome never reflects the secondary component. Experts assess the
// combined construct at base_accuracy, except on the hard subgroup: the
// ambiguous severity band without secondary need, where scenario-specific
// corruption applies.
struct ScenarioSpec {
  Scenario scenario = Scenario::CHo;
  long long n = 5000;
  int m = 6;              // total feature columns (bias scenarios need >= 6)
  int k = 20;             // expert count
  std::uint64_t seed = 0;
  bool selective = false;

  double severity_rate = 0.5;       // P(severity rule fires)
  double secondary_rate = 0.08;     // P(secondary-need rule fires)
  double label_noise = 0.00002;     // extra flip rate on both rule labels
  double base_accuracy = 0.95;      // expert accuracy outside corrupted regions
  double proxy_noise = 0.2;         // sd of severity-proxy measurement noise
  double need_gap = 3.0;            // separation of the two need components
  double need_sd = 0.005;           // within-component jitter of the need score
  double need_grade = 0.15;         // logistic scale of the need-threshold draw
  double hard_band_mass = 1.0;      // population mass of the hard severity band
  double hard_band_prevalence = 0.5;    // P(severity label | band)

  double ciho_flip_rate = 0.75;     // CIHo: fraction of the hard subgroup flipped
  double cihe_error_lo = 0.7;       // CIHe: per-expert error range
  double cihe_error_hi = 1.0;
  double minority_fraction = 0.5;   // bias scenarios

  void check() const {
    if (n < 1) throw DataError("scenario n must be >= 1");
    if (k < 1) throw DataError("scenario k must be >= 1");
    if (is_bias_scenario(scenario) && k < 2) {
      throw DataError("bias scenarios need k >= 2");
    }
    const int min_m = is_bias_scenario(scenario) ? 6 : 3;
    if (m < min_m) {
      throw DataError(std::string("scenario ") + scenario_name(scenario) + " needs m >= " +
                      std::to_string(min_m));
    }
    if (!(cihe_error_lo >= 0.0 && cihe_error_lo <= cihe_error_hi && cihe_error_hi <= 1.0)) {
      throw DataError("CIHe error range must satisfy 0 <= lo <= hi <= 1");
    }
    if (!(severity_rate > 0.0 && severity_rate < 1.0) ||
        !(secondary_rate > 0.0 && secondary_rate < 1.0)) {
      throw DataError("rule rates must lie in (0,1)");
    }
    if (!(label_noise >= 0.0 && label_noise <= 0.05)) {
      throw DataError("label_noise must lie in [0, 0.05]");
    }
    if (!(base_accuracy > 0.5 && base_accuracy <= 1.0)) {
      throw DataError("base_accuracy must lie in (0.5, 1]");
    }
    if (!(minority_fraction > 0.0 && minority_fraction < 1.0)) {
      throw DataError("minority_fraction must lie in (0,1)");
    }
  }
};

// Generated world: the dataset plus every latent needed by the evaluation
// oracles. construct = y1 OR y2 elementwise; the dataset's outcome column is
// y1 (censored under selective labels where the decision screens out).
struct GroundTruthBundle {
  DecisionDataset dataset;
  std::vector<int> y1;          // proxied component (the observed outcome)
  std::vector<int> y2;          // unproxied component
  std::vector<int> construct;   // y1 | y2
  std::vector<char> hard_mask;  // ambiguous-band subgroup
  std::vector<int> minority;    // group indicator (meaningful in bias scenarios)
  ScenarioSpec spec;
};

namespace detail {

inline std::vector<long long> draw_without_replacement(std::vector<long long> pool,
                                                       long long count, std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  if (count > static_cast<long long>(pool.size())) count = static_cast<long long>(pool.size());
  pool.resize(static_cast<size_t>(count));
  return pool;
}

}  // namespace detail

inline GroundTruthBundle generate(const ScenarioSpec& spec) {
  spec.check();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const long long n = spec.n;
  const bool bias = is_bias_scenario(spec.scenario);
  const double sev_thr = normal_quantile(1.0 - spec.severity_rate);
  // Need score: mixture component centers chosen so the marginal is centered.
  const double need_low = -spec.secondary_rate * spec.need_gap;
  const double need_high = need_low + spec.need_gap;
  const double need_thr = 0.5 * (need_low + need_high);
  // Ambiguous band around the severity threshold holding hard_band_mass of
  // the population with hard_band_prevalence of it above the threshold.
  const double below = spec.hard_band_mass * (1.0 - spec.hard_band_prevalence);
  const double above = spec.hard_band_mass * spec.hard_band_prevalence;
  double lo_q = (1.0 - spec.severity_rate) - below;
  double hi_q = (1.0 - spec.severity_rate) + above;
  lo_q = std::clamp(lo_q, 1e-9, 1.0 - 1e-9);
  hi_q = std::clamp(hi_q, 1e-9, 1.0 - 1e-9);
  const double band_lo = normal_quantile(lo_q);
  const double band_hi = normal_quantile(hi_q);

  for (int attempt = 0; attempt < 10; ++attempt) {
    GroundTruthBundle b;
    b.spec = spec;
    b.minority.assign(static_cast<size_t>(n), 0);
    b.hard_mask.assign(static_cast<size_t>(n), 0);
    b.y1.resize(static_cast<size_t>(n));
    b.y2.resize(static_cast<size_t>(n));
    b.construct.resize(static_cast<size_t>(n));

    DecisionDataset& ds = b.dataset;
    ds.features.resize(n, spec.m);
    ds.feature_names.clear();

    for (long long i = 0; i < n; ++i) {
      const size_t si = static_cast<size_t>(i);
      b.minority[si] = unif(rng) < spec.minority_fraction ? 1 : 0;
      const double u = gauss(rng);
      const int comp = unif(rng) < spec.secondary_rate ? 1 : 0;
      const double need_score = (comp ? need_high : need_low) + spec.need_sd * gauss(rng);
      // Graded threshold: the need label follows a logistic draw around the
      // midpoint, so the label's log-odds are linear in the recorded score.
      const int r2 = unif(rng) < sigmoid((need_score - need_thr) / spec.need_grade) ? 1 : 0;
      if (!bias) {
        ds.features(i, 0) = u + spec.proxy_noise * gauss(rng);
        ds.features(i, 1) = need_score;
        for (int j = 2; j < spec.m; ++j) ds.features(i, j) = gauss(rng);
      } else {
        // Group-specific need structure: the majority's severity proxy and
        // need score live in columns 0,1 and the minority's in columns 2,3;
        // the irrelevant pair carries pure noise. Last column is the group
        // indicator.
        const bool w = b.minority[si] == 1;
        const double pu = u + spec.proxy_noise * gauss(rng);
        const double n0 = gauss(rng);
        const double n1 = gauss(rng);
        ds.features(i, 0) = w ? n0 : pu;
        ds.features(i, 1) = w ? n1 : need_score;
        ds.features(i, 2) = w ? pu : n0;
        ds.features(i, 3) = w ? need_score : n1;
        for (int j = 4; j < spec.m - 1; ++j) ds.features(i, j) = gauss(rng);
        ds.features(i, spec.m - 1) = static_cast<double>(b.minority[si]);
      }
      const int r1 = u > sev_thr ? 1 : 0;
      const int y1 = (unif(rng) < spec.label_noise) ? 1 - r1 : r1;
      const int y2 = (unif(rng) < spec.label_noise) ? 1 - r2 : r2;
      b.y1[si] = y1;
      b.y2[si] = y2;
      b.construct[si] = (y1 | y2);
      b.hard_mask[si] = (u > band_lo && u <= band_hi && r2 == 0) ? 1 : 0;
    }

    if (!bias) {
      ds.feature_names = {"sev", "need"};
      for (int j = 2; j < spec.m; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    } else {
      ds.feature_names = {"sev_a", "need_a", "sev_b", "need_b"};
      for (int j = 4; j < spec.m - 1; ++j) ds.feature_names.push_back("x" + std::to_string(j));
      ds.feature_names.push_back("grp");
    }

    // Expert assignment and base decisions: high-accuracy assessment of the
    // combined construct.
    std::uniform_int_distribution<int> expert_draw(1, spec.k);
    ds.expert_ids.resize(static_cast<size_t>(n));
    ds.decisions.resize(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) {
      const size_t si = static_cast<size_t>(i);
      ds.expert_ids[si] = expert_draw(rng);
      const int correct = b.construct[si];
      ds.decisions[si] = (unif(rng) < spec.base_accuracy) ? correct : 1 - correct;
    }

    // Scenario-specific corruption.
    switch (spec.scenario) {
      case Scenario::CHo: {
        for (long long i = 0; i < n; ++i) {
          if (b.hard_mask[static_cast<size_t>(i)]) {
            ds.decisions[static_cast<size_t>(i)] = unif(rng) < 0.5 ? 1 : 0;
          }
        }
        break;
      }
      case Scenario::CIHo: {
        std::vector<long long> hard;
        for (long long i = 0; i < n; ++i) {
          if (b.hard_mask[static_cast<size_t>(i)]) hard.push_back(i);
        }
        const long long flips = std::llround(spec.ciho_flip_rate * static_cast<double>(hard.size()));
        for (long long i : detail::draw_without_replacement(hard, flips, rng)) {
          ds.decisions[static_cast<size_t>(i)] = 1 - b.y1[static_cast<size_t>(i)];
        }
        break;
      }
      case Scenario::CIHe: {
        std::uniform_real_distribution<double> err(spec.cihe_error_lo, spec.cihe_error_hi);
        std::vector<double> p_h(static_cast<size_t>(spec.k));
        for (int h = 0; h < spec.k; ++h) p_h[static_cast<size_t>(h)] = err(rng);
        for (int h = 1; h <= spec.k; ++h) {
          std::vector<long long> mine;
          for (long long i = 0; i < n; ++i) {
            if (b.hard_mask[static_cast<size_t>(i)] && ds.expert_ids[static_cast<size_t>(i)] == h) {
              mine.push_back(i);
            }
          }
          const long long flips =
              std::llround(p_h[static_cast<size_t>(h - 1)] * static_cast<double>(mine.size()));
          for (long long i : detail::draw_without_replacement(mine, flips, rng)) {
            ds.decisions[static_cast<size_t>(i)] = 1 - b.y1[static_cast<size_t>(i)];
          }
        }
        break;
      }
      case Scenario::DeP: {
        const int biased_upto = spec.k / 2;
        for (long long i = 0; i < n; ++i) {
          const size_t si = static_cast<size_t>(i);
          if (b.minority[si] == 1 && ds.expert_ids[si] <= biased_upto) ds.decisions[si] = 0;
        }
        break;
      }
      case Scenario::HoF: {
        std::vector<long long> women;
        for (long long i = 0; i < n; ++i) {
          if (b.minority[static_cast<size_t>(i)] == 1) women.push_back(i);
        }
        const long long cnt = std::llround(0.8 * static_cast<double>(women.size()));
        for (long long i : detail::draw_without_replacement(women, cnt, rng)) {
          ds.decisions[static_cast<size_t>(i)] = 0;
        }
        break;
      }
      case Scenario::nRnD: {
        std::vector<long long> women;
        for (long long i = 0; i < n; ++i) {
          if (b.minority[static_cast<size_t>(i)] == 1) women.push_back(i);
        }
        const long long cnt = std::llround(0.95 * static_cast<double>(women.size()));
        for (long long i : detail::draw_without_replacement(women, cnt, rng)) {
          ds.expert_ids[static_cast<size_t>(i)] = 1;
          ds.decisions[static_cast<size_t>(i)] = 0;
        }
        break;
      }
      case Scenario::DeS: {
        for (long long i = 0; i < n; ++i) {
          const size_t si = static_cast<size_t>(i);
          if (b.minority[si] == 1) ds.decisions[si] = 0;
        }
        break;
      }
    }

    // Degenerate worlds (single-class severity label) are regenerated.
    long long y1_pos = std::accumulate(b.y1.begin(), b.y1.end(), 0ll);
    if ((y1_pos == 0 || y1_pos == n) && n > 1) continue;

    // Ensure dense expert ids: every expert must keep at least one case.
    std::vector<long long> counts(static_cast<size_t>(spec.k), 0);
    for (int e : ds.expert_ids) counts[static_cast<size_t>(e - 1)]++;
    bool missing = false;
    for (long long c : counts) {
      if (c == 0) missing = true;
    }
    if (missing) {
      if (n < 2 * spec.k) continue;  // too small; retry with fresh draws
      // Reassign deterministic round-robin from the largest caseloads.
      for (int h = 0; h < spec.k; ++h) {
        if (counts[static_cast<size_t>(h)] > 0) continue;
        int donor = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        for (long long i = 0; i < n; ++i) {
          if (ds.expert_ids[static_cast<size_t>(i)] == donor + 1) {
            ds.expert_ids[static_cast<size_t>(i)] = h + 1;
            counts[static_cast<size_t>(donor)]--;
            counts[static_cast<size_t>(h)]++;
            break;
          }
        }
      }
    }

    ds.expert_count = spec.k;
    ds.expert_names.clear();
    for (int h = 1; h <= spec.k; ++h) ds.expert_names.push_back(std::to_string(h));
    ds.case_ids.resize(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) ds.case_ids[static_cast<size_t>(i)] = std::to_string(i);

    ds.outcomes.resize(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) {
      const size_t si = static_cast<size_t>(i);
      if (spec.selective && ds.decisions[si] == 0) {
        ds.outcomes[si] = std::nullopt;  // screened out: outcome censored
      } else {
        ds.outcomes[si] = b.y1[si];
      }
    }
    ds.group.resize(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) ds.group[static_cast<size_t>(i)] = b.minority[static_cast<size_t>(i)];
    ds.construct.resize(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) ds.construct[static_cast<size_t>(i)] = b.construct[static_cast<size_t>(i)];

    ds.validate(spec.selective ? std::optional<int>(1) : std::nullopt);
    return b;
  }
  throw DataError("scenario generation degenerate after 10 attempts (severity label single-class)");
}

inline std::vector<GroundTruthBundle> scenario_suite(const ScenarioSpec& base,
                                                     const std::vector<std::uint64_t>& seeds) {
  std::vector<GroundTruthBundle> out;
  out.reserve(seeds.size());
  for (std::uint64_t s : seeds) {
    ScenarioSpec spec = base;
    spec.seed = s;
    out.push_back(generate(spec));
  }
  return out;
}

// Bundle export: data-model file format with the extra ground-truth columns.
inline void write_bundle(const GroundTruthBundle& b, const std::string& data_path,
                         const std::string& manifest_path, const std::string& provenance = "") {
  std::ofstream out(data_path);
  if (!out) throw DataError("cannot open for writing: " + data_path);
  if (!provenance.empty()) out << "# " << provenance << "\n";
  const DecisionDataset& ds = b.dataset;
  out << "id";
  for (const auto& f : ds.feature_names) out << "," << f;
  out << ",expert,decision,outcome,group,construct,y2,hard\n";
  for (long long i = 0; i < ds.rows(); ++i) {
    const size_t si = static_cast<size_t>(i);
    out << ds.case_ids[si];
    for (long long j = 0; j < ds.cols(); ++j) out << "," << format_double(ds.features(i, j));
    out << "," << ds.expert_names[static_cast<size_t>(ds.expert_ids[si] - 1)];
    out << "," << ds.decisions[si] << ",";
    if (ds.outcomes[si].has_value()) out << *ds.outcomes[si];
    out << "," << b.minority[si] << "," << b.construct[si] << "," << b.y2[si] << ","
        << static_cast<int>(b.hard_mask[si]) << "\n";
  }
  out.close();

  std::ofstream man(manifest_path);
  if (!man) throw DataError("cannot open for writing: " + manifest_path);
  const ScenarioSpec& s = b.spec;
  man << "format = amalgam-bundle-manifest/1\n";
  if (!provenance.empty()) man << "provenance = " << provenance << "\n";
  man << "scenario = " << scenario_name(s.scenario) << "\n";
  man << "n = " << s.n << "\n";
  man << "m = " << s.m << "\n";
  man << "k = " << s.k << "\n";
  man << "seed = " << s.seed << "\n";
  man << "selective = " << (s.selective ? 1 : 0) << "\n";
  man << "severity_rate = " << format_double(s.severity_rate) << "\n";
  man << "secondary_rate = " << format_double(s.secondary_rate) << "\n";
  man << "label_noise = " << format_double(s.label_noise) << "\n";
  man << "base_accuracy = " << format_double(s.base_accuracy) << "\n";
  man << "proxy_noise = " << format_double(s.proxy_noise) << "\n";
  man << "need_gap = " << format_double(s.need_gap) << "\n";
  man << "need_sd = " << format_double(s.need_sd) << "\n";
  man << "need_grade = " << format_double(s.need_grade) << "\n";
  man << "hard_band_mass = " << format_double(s.hard_band_mass) << "\n";
  man << "hard_band_prevalence = " << format_double(s.hard_band_prevalence) << "\n";
  man << "ciho_flip_rate = " << format_double(s.ciho_flip_rate) << "\n";
  man << "cihe_error_lo = " << format_double(s.cihe_error_lo) << "\n";
  man << "cihe_error_hi = " << format_double(s.cihe_error_hi) << "\n";
  man << "minority_fraction = " << format_double(s.minority_fraction) << "\n";
}

// Schema matching write_bundle's column layout.
inline ColumnRoles bundle_roles() {
  ColumnRoles roles;
  roles.features_all = true;
  roles.decision_column = "decision";
  roles.expert_column = "expert";
  roles.outcome_column = "outcome";
  roles.group_column = "group";
  roles.construct_column = "construct";
  roles.id_column = "id";
  roles.ignore_columns = {"y2", "hard"};
  return roles;
}

}  // namespace amalgam
