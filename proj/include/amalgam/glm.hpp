#pragma once

#include "amalgam/common.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace amalgam {

struct GlmConfig {
  double tol = 1e-8;       // gradient-norm convergence tolerance
  int max_iter = 100;
  double coef_guard = 1e6; // divergence guard for separable data at ridge 0
};

// Ridge-penalized weighted logistic regression. theta holds m coefficients
// followed by the unpenalized intercept. grad_norm_at_opt certifies the fit
// is a stationary point of the penalized weighted risk.
struct WeightedLogisticModel {
  Vector theta;  // length m+1, intercept last
  double ridge = 0.0;
  double grad_norm_at_opt = 0.0;
  int feature_count = 0;

  double logit(const Vector& x) const {
    if (x.size() != feature_count) {
      throw DataError("feature vector has " + std::to_string(x.size()) +
                      " entries, model expects " + std::to_string(feature_count));
    }
    return theta.head(feature_count).dot(x) + theta(feature_count);
  }

  double prob(const Vector& x) const {
    return std::clamp(sigmoid(logit(x)), 1e-12, 1.0 - 1e-12);
  }

  Vector logits(const Matrix& X) const {
    if (X.cols() != feature_count) {
      throw DataError("feature matrix has " + std::to_string(X.cols()) +
                      " columns, model expects " + std::to_string(feature_count));
    }
    return (X * theta.head(feature_count)).array() + theta(feature_count);
  }
};

namespace detail {

inline void check_glm_inputs(const Matrix& X, const std::vector<int>& y,
                             const Vector& weights) {
  if (X.rows() != static_cast<long long>(y.size()) || X.rows() != weights.size()) {
    throw DataError("X, y and weights disagree on the number of rows");
  }
  if (X.rows() == 0) throw DataError("cannot fit on an empty dataset");
  for (int v : y) {
    if (v != 0 && v != 1) throw DataError("labels must be binary 0/1");
  }
  for (long long i = 0; i < weights.size(); ++i) {
    if (!(weights(i) > 0.0)) throw DataError("weights must be strictly positive");
  }
}

}  // namespace detail

// Gradient of the penalized weighted risk at theta:
//   sum_i w_i (sigma(theta'x_i) - y_i) [x_i;1] + ridge [theta_noint;0]
inline Vector risk_gradient(const Vector& theta, const Matrix& X, const std::vector<int>& y,
                            const Vector& weights, double ridge) {
  detail::check_glm_inputs(X, y, weights);
  const long long m = X.cols();
  if (theta.size() != m + 1) throw DataError("theta length does not match feature count + 1");
  Vector z = (X * theta.head(m)).array() + theta(m);
  Vector g = Vector::Zero(m + 1);
  for (long long i = 0; i < X.rows(); ++i) {
    const double r = weights(i) * (sigmoid(z(i)) - static_cast<double>(y[static_cast<size_t>(i)]));
    g.head(m) += r * X.row(i).transpose();
    g(m) += r;
  }
  g.head(m) += ridge * theta.head(m);
  return g;
}

inline Vector risk_gradient(const WeightedLogisticModel& model, const Matrix& X,
                            const std::vector<int>& y, const Vector& weights) {
  return risk_gradient(model.theta, X, y, weights, model.ridge);
}

// Hessian of the penalized weighted risk:
//   sum_i w_i s_i(1-s_i) [x_i;1][x_i;1]' + ridge diag(1..1,0)
// Symmetric PSD, and PD whenever ridge > 0 on the coefficient block.
inline Matrix risk_hessian(const Vector& theta, const Matrix& X, const std::vector<int>& y,
                           const Vector& weights, double ridge) {
  detail::check_glm_inputs(X, y, weights);
  const long long m = X.cols();
  if (theta.size() != m + 1) throw DataError("theta length does not match feature count + 1");
  Vector z = (X * theta.head(m)).array() + theta(m);
  Matrix H = Matrix::Zero(m + 1, m + 1);
  Vector xt(m + 1);
  for (long long i = 0; i < X.rows(); ++i) {
    const double s = sigmoid(z(i));
    const double c = weights(i) * s * (1.0 - s);
    xt.head(m) = X.row(i).transpose();
    xt(m) = 1.0;
    H.noalias() += c * (xt * xt.transpose());
  }
  for (long long j = 0; j < m; ++j) H(j, j) += ridge;
  return H;
}

inline Matrix risk_hessian(const WeightedLogisticModel& model, const Matrix& X,
                           const std::vector<int>& y, const Vector& weights) {
  return risk_hessian(model.theta, X, y, weights, model.ridge);
}

// Penalized weighted log-loss (negative log-likelihood + ridge/2 |theta|^2).
inline double risk_value(const Vector& theta, const Matrix& X, const std::vector<int>& y,
                         const Vector& weights, double ridge) {
  const long long m = X.cols();
  Vector z = (X * theta.head(m)).array() + theta(m);
  double v = 0.0;
  for (long long i = 0; i < X.rows(); ++i) {
    // log(1+exp(z)) - y z, computed stably
    const double zi = z(i);
    const double lse = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    v += weights(i) * (lse - static_cast<double>(y[static_cast<size_t>(i)]) * zi);
  }
  v += 0.5 * ridge * theta.head(m).squaredNorm();
  return v;
}

// Damped Newton on the penalized weighted log-loss. Throws NumericError on
// non-convergence or when coefficients diverge (separable data with ridge 0).
inline WeightedLogisticModel fit(const Matrix& X, const std::vector<int>& y,
                                 const Vector& weights, double ridge,
                                 const GlmConfig& cfg = GlmConfig{}) {
  detail::check_glm_inputs(X, y, weights);
  if (ridge < 0.0) throw DataError("ridge must be nonnegative");
  const long long m = X.cols();
  Vector theta = Vector::Zero(m + 1);
  double value = risk_value(theta, X, y, weights, ridge);
  for (int it = 0; it < cfg.max_iter; ++it) {
    Vector g = risk_gradient(theta, X, y, weights, ridge);
    const double gnorm = g.norm();
    if (gnorm <= cfg.tol) {
      if (ridge == 0.0) {
        // Perfectly separated data drive the unpenalized optimum to infinity;
        // a vanishing gradient with every case classified to numerical purity
        // is that signature, not a genuine stationary point.
        Vector z = (X * theta.head(m)).array() + theta(m);
        bool separated = true;
        for (long long i = 0; i < X.rows(); ++i) {
          const double resid =
              std::fabs(sigmoid(z(i)) - static_cast<double>(y[static_cast<size_t>(i)]));
          if (resid > 1e-4) {
            separated = false;
            break;
          }
        }
        if (separated) {
          throw NumericError(
              "data are separable with ridge 0; coefficients diverge (norm " +
              format_double(theta.norm()) + ")");
        }
      }
      WeightedLogisticModel model;
      model.theta = theta;
      model.ridge = ridge;
      model.grad_norm_at_opt = gnorm;
      model.feature_count = static_cast<int>(m);
      return model;
    }
    Matrix H = risk_hessian(theta, X, y, weights, ridge);
    Eigen::LDLT<Matrix> ldlt(H);
    Vector step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      step = ldlt.solve(g);
    } else {
      // Hessian numerically singular; fall back to a tiny diagonal lift.
      Matrix Hl = H + 1e-10 * Matrix::Identity(m + 1, m + 1);
      step = Hl.ldlt().solve(g);
    }
    // Near the optimum the predicted decrease 0.5 g'step drops below what the
    // objective can resolve in double precision; take the unit Newton step
    // unconditionally there and let the gradient test terminate.
    const double predicted_decrease = 0.5 * g.dot(step);
    if (predicted_decrease <= 1e-12 * (1.0 + std::fabs(value))) {
      theta -= step;
      value = risk_value(theta, X, y, weights, ridge);
    } else {
      double alpha = 1.0;
      double new_value = 0.0;
      Vector cand;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        cand = theta - alpha * step;
        new_value = risk_value(cand, X, y, weights, ridge);
        if (new_value < value) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        throw NumericError("line search stalled at iteration " + std::to_string(it) +
                           ", gradient norm " + format_double(gnorm));
      }
      theta = cand;
      value = new_value;
    }
    if (theta.norm() > cfg.coef_guard) {
      throw NumericError("coefficients diverged (norm > " + format_double(cfg.coef_guard) +
                         "); data may be separable with ridge " + format_double(ridge));
    }
  }
  throw NumericError("Newton did not converge in " + std::to_string(cfg.max_iter) +
                     " iterations (ridge " + format_double(ridge) + ")");
}

inline double hessian_condition_number(const Matrix& H) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

// Regularization escalation grid for invertibility.
inline const std::vector<double>& ridge_grid() {
  static const std::vector<double> grid = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  return grid;
}

// Fits with the smallest ridge from the geometric grid 1e-3 .. 1e3 for which
// Newton converges and the Hessian at the optimum is well conditioned
// (condition number below 1e10).
inline std::pair<WeightedLogisticModel, double> ensure_invertible_fit(
    const Matrix& X, const std::vector<int>& y, const Vector& weights,
    const GlmConfig& cfg = GlmConfig{}, double max_condition = 1e10) {
  const std::vector<double>& grid = ridge_grid();
  double last_cond = std::numeric_limits<double>::infinity();
  std::string last_err;
  for (double ridge : grid) {
    WeightedLogisticModel model;
    try {
      model = fit(X, y, weights, ridge, cfg);
    } catch (const NumericError& e) {
      last_err = e.what();
      continue;
    }
    const Matrix H = risk_hessian(model, X, y, weights);
    const double cond = hessian_condition_number(H);
    last_cond = cond;
    if (cond < max_condition) {
      return {model, ridge};
    }
  }
  throw NumericError("no ridge in the grid produced an invertible fit; last condition number " +
                     format_double(last_cond) +
                     (last_err.empty() ? "" : ("; last failure: " + last_err)));
}

// --- model serialization (versioned key-value text, bit-exact round trip) ---

struct SigmoidCalibrator;  // fwd; serialized alongside the base model

inline std::string serialize_model(const WeightedLogisticModel& model) {
  std::ostringstream out;
  out << "format = amalgam-model/1\n";
  out << "feature_count = " << model.feature_count << "\n";
  out << "ridge = " << format_double(model.ridge) << "\n";
  out << "grad_norm = " << format_double(model.grad_norm_at_opt) << "\n";
  out << "theta =";
  for (long long i = 0; i < model.theta.size(); ++i) out << " " << format_double(model.theta(i));
  out << "\n";
  return out.str();
}

inline WeightedLogisticModel deserialize_model(const std::string& text) {
  WeightedLogisticModel model;
  std::istringstream in(text);
  std::string line;
  bool saw_format = false;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
    };
    strip(key);
    strip(val);
    if (key == "format") {
      if (val != "amalgam-model/1") throw DataError("unsupported model format: " + val);
      saw_format = true;
    } else if (key == "feature_count") {
      model.feature_count = static_cast<int>(parse_int(val));
    } else if (key == "ridge") {
      model.ridge = parse_double(val);
    } else if (key == "grad_norm") {
      model.grad_norm_at_opt = parse_double(val);
    } else if (key == "theta") {
      std::istringstream vs(val);
      std::vector<double> vals;
      std::string tok;
      while (vs >> tok) vals.push_back(parse_double(tok));
      model.theta.resize(static_cast<long long>(vals.size()));
      for (size_t i = 0; i < vals.size(); ++i) model.theta(static_cast<long long>(i)) = vals[i];
    }
  }
  if (!saw_format) throw DataError("model document missing format line");
  if (model.theta.size() != model.feature_count + 1) {
    throw DataError("model theta length inconsistent with feature_count");
  }
  return model;
}

}  // namespace amalgam
