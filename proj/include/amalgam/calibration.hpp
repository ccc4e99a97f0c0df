#pragma once

#include "amalgam/common.hpp"
#include "amalgam/glm.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace amalgam {

// Platt-style sigmoid rescaling of raw scores: p(s) = 1 / (1 + exp(a*s + b)).
// Well-ordered scores yield slope_a < 0; slope_a > 0 means the mapping
// decreases in the score and is flagged as anti-calibrated.
struct SigmoidCalibrator {
  double slope_a = -1.0;
  double offset_b = 0.0;

  double apply(double score) const {
    return std::clamp(sigmoid(-(slope_a * score + offset_b)), 1e-12, 1.0 - 1e-12);
  }
  bool anti_calibrated() const { return slope_a > 0.0; }
};

// Two-parameter Newton fit of the calibrator on (raw score, binary label)
// pairs, with the usual smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2).
inline SigmoidCalibrator fit_calibrator(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DataError("scores/labels length mismatch");
  const size_t n = scores.size();
  if (n < 10) throw DataError("calibration needs at least 10 points, got " + std::to_string(n));
  long long npos = 0, nneg = 0;
  for (int y : labels) {
    if (y == 1) ++npos;
    else if (y == 0) ++nneg;
    else throw DataError("labels must be binary 0/1");
  }
  if (npos == 0 || nneg == 0) throw DataError("calibration needs both classes present");

  const double hi = (static_cast<double>(npos) + 1.0) / (static_cast<double>(npos) + 2.0);
  const double lo = 1.0 / (static_cast<double>(nneg) + 2.0);

  // Degenerate fallback: constant scores carry no ranking information; return
  // slope 0 with the smoothed-prevalence intercept.
  const double smin = *std::min_element(scores.begin(), scores.end());
  const double smax = *std::max_element(scores.begin(), scores.end());
  if (smax - smin < 1e-300) {
    const double prev = (static_cast<double>(npos) + 1.0) / (static_cast<double>(n) + 2.0);
    SigmoidCalibrator c;
    c.slope_a = 0.0;
    c.offset_b = std::log((1.0 - prev) / prev);
    return c;
  }

  double a = 0.0;
  double b = std::log((static_cast<double>(nneg) + 1.0) / (static_cast<double>(npos) + 1.0));
  // Newton on the log-loss of p_i = sigmoid(-(a s_i + b)) against the smoothed
  // targets t_i. With z = a s + b: dloss/dz = t - p, d2loss/dz2 = p(1-p).
  for (int it = 0; it < 200; ++it) {
    double g_a = 0.0, g_b = 0.0, h_aa = 0.0, h_ab = 0.0, h_bb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double z = a * scores[i] + b;
      const double p = sigmoid(-z);
      const double t = labels[i] == 1 ? hi : lo;
      const double gz = t - p;
      const double hz = p * (1.0 - p);
      g_a += gz * scores[i];
      g_b += gz;
      h_aa += hz * scores[i] * scores[i];
      h_ab += hz * scores[i];
      h_bb += hz;
    }
    const double det = h_aa * h_bb - h_ab * h_ab;
    if (std::fabs(det) < 1e-300) break;
    const double da = (h_bb * g_a - h_ab * g_b) / det;
    const double db = (h_aa * g_b - h_ab * g_a) / det;
    a -= da;
    b -= db;
    if (std::fabs(da) + std::fabs(db) < 1e-12) break;
  }
  SigmoidCalibrator c;
  c.slope_a = a;
  c.offset_b = b;
  return c;
}

// Logistic model plus optional post-hoc calibration layer. Calibration maps
// the raw logit; predictions stay strictly inside (0,1).
struct CalibratedDecisionModel {
  WeightedLogisticModel base;
  std::optional<SigmoidCalibrator> calibrator;

  double predict_proba(const Vector& x) const {
    const double raw = base.logit(x);
    if (calibrator.has_value()) return calibrator->apply(raw);
    return std::clamp(sigmoid(raw), 1e-12, 1.0 - 1e-12);
  }

  Vector predict_proba_all(const Matrix& X) const {
    Vector z = base.logits(X);
    Vector p(z.size());
    for (long long i = 0; i < z.size(); ++i) {
      p(i) = calibrator.has_value() ? calibrator->apply(z(i))
                                    : std::clamp(sigmoid(z(i)), 1e-12, 1.0 - 1e-12);
    }
    return p;
  }
};

inline std::string serialize_calibrated(const CalibratedDecisionModel& m) {
  std::ostringstream out;
  out << serialize_model(m.base);
  if (m.calibrator.has_value()) {
    out << "calibrator = " << format_double(m.calibrator->slope_a) << " "
        << format_double(m.calibrator->offset_b) << "\n";
  } else {
    out << "calibrator = none\n";
  }
  return out.str();
}

inline CalibratedDecisionModel deserialize_calibrated(const std::string& text) {
  CalibratedDecisionModel m;
  m.base = deserialize_model(text);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("calibrator", 0) != 0) continue;
    auto eq = line.find('=');
    std::string val = line.substr(eq + 1);
    std::istringstream vs(val);
    std::string tok;
    vs >> tok;
    if (tok == "none") {
      m.calibrator.reset();
    } else {
      SigmoidCalibrator c;
      c.slope_a = parse_double(tok);
      vs >> tok;
      c.offset_b = parse_double(tok);
      m.calibrator = c;
    }
  }
  return m;
}

// Convenience: ridge-grid fit plus in-sample Platt scaling on the logits.
inline CalibratedDecisionModel fit_calibrated(const Matrix& X, const std::vector<int>& y,
                                              const Vector& weights,
                                              const GlmConfig& cfg = GlmConfig{},
                                              bool calibrate = true) {
  auto [model, ridge_used] = ensure_invertible_fit(X, y, weights, cfg);
  (void)ridge_used;
  CalibratedDecisionModel out;
  out.base = model;
  if (calibrate) {
    Vector z = model.logits(X);
    std::vector<double> scores(static_cast<size_t>(z.size()));
    for (long long i = 0; i < z.size(); ++i) scores[static_cast<size_t>(i)] = z(i);
    long long npos = 0;
    for (int v : y) npos += v;
    if (z.size() >= 10 && npos > 0 && npos < z.size()) {
      out.calibrator = fit_calibrator(scores, y);
    }
  }
  return out;
}

}  // namespace amalgam
