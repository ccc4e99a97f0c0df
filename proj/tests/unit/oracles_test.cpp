#include "amalgam/oracles.hpp"
#include "amalgam/glm.hpp"
#include "amalgam/influence.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace amalgam;

TEST_CASE("pairwise auc oracle hand values") {
  CHECK(pairwise_auc_oracle({0.9, 0.8, 0.4, 0.2}, {1, 0, 1, 0}).value == 0.75);
  CHECK(pairwise_auc_oracle({0.3, 0.3, 0.3}, {1, 0, 1}).value == 0.5);
  CHECK(pairwise_auc_oracle({0.8, 0.1}, {1, 0}).value == 1.0);
  CHECK_THROWS_AS(pairwise_auc_oracle({0.5}, {1}), DataError);
}

TEST_CASE("inverse normal oracle brackets the quantile") {
  CHECK(inverse_normal_oracle(0.5).value == Catch::Approx(0.0).margin(1e-9));
  CHECK(inverse_normal_oracle(0.9875).value == Catch::Approx(2.2414027276).margin(1e-8));
  CHECK(inverse_normal_oracle(0.975).value == Catch::Approx(1.9599639845).margin(1e-8));
  CHECK_THROWS_AS(inverse_normal_oracle(0.0), DataError);
  CHECK_THROWS_AS(inverse_normal_oracle(1.0), DataError);
  // the production quantile agrees with the bisection oracle across the range
  for (double p : {0.001, 0.1, 0.33, 0.77, 0.9875, 0.9999}) {
    CHECK(normal_quantile(p) == Catch::Approx(inverse_normal_oracle(p).value).margin(2e-9));
  }
}

namespace {

struct Fixture {
  Matrix X;
  std::vector<int> d;
  std::vector<int> experts;
};

Fixture fixture(std::uint64_t seed, long long n = 40, int k = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Fixture f;
  f.X.resize(n, 2);
  for (long long i = 0; i < n; ++i) {
    f.X(i, 0) = gauss(rng);
    f.X(i, 1) = gauss(rng);
    f.d.push_back(f.X(i, 0) + gauss(rng) > 0 ? 1 : 0);
    f.experts.push_back(static_cast<int>(i % k) + 1);
  }
  return f;
}

}  // namespace

TEST_CASE("retraining oracle rejects a zero step and handles degenerate caseloads") {
  Fixture f = fixture(4);
  Vector x(2);
  x << 0.5, 0.5;
  CHECK_THROWS_AS(retraining_influence_oracle(f.X, f.d, f.experts, 1, x, 0.0, 1e-2), DataError);
  CHECK_THROWS_AS(retraining_influence_oracle(f.X, f.d, f.experts, 9, x, 1e-4, 1e-2), DataError);

  // an expert whose cases are all identical still yields a finite value
  Fixture g = fixture(5);
  for (long long i = 0; i < g.X.rows(); ++i) {
    if (g.experts[static_cast<size_t>(i)] == 2) {
      g.X.row(i) << 1.0, -1.0;
      g.d[static_cast<size_t>(i)] = 1;
    }
  }
  OracleResult r = retraining_influence_oracle(g.X, g.d, g.experts, 2, x, 1e-4, 1e-2);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("retraining oracle is Richardson-consistent across step sizes") {
  Fixture f = fixture(6);
  Vector x(2);
  x << -0.3, 0.8;
  const double i3 = retraining_influence_oracle(f.X, f.d, f.experts, 1, x, 1e-3, 1e-2).value;
  const double i4 = retraining_influence_oracle(f.X, f.d, f.experts, 1, x, 1e-4, 1e-2).value;
  const double i5 = retraining_influence_oracle(f.X, f.d, f.experts, 1, x, 1e-5, 1e-2).value;
  const double d1 = std::fabs(i3 - i4);  // dominated by the first-order error at 1e-3
  const double d2 = std::fabs(i4 - i5);
  CHECK(d2 <= std::max(d1, 1e-10) * 10.0);
  // and the oracle agrees with the analytic value
  GlmConfig cfg;
  cfg.tol = 1e-10;
  cfg.max_iter = 300;
  WeightedLogisticModel model = fit(f.X, f.d, Vector::Ones(f.X.rows()), 1e-2, cfg);
  InfluenceEngine engine(model, f.X, f.d, f.experts, 2, Vector::Ones(f.X.rows()),
                         InfluenceScale::PerUnitWeight);
  const double analytic = engine.profile(x).per_expert(0);
  CHECK(std::fabs(analytic - i4) <= std::max(0.01 * std::fabs(i4), 1e-6));
}

TEST_CASE("coverage oracle degenerate inputs") {
  CHECK(ci_coverage_oracle(0.05, 1.0, 30, 0.95, 100).value == 1.0);
  CHECK(ci_coverage_oracle(0.05, 0.9, 1, 0.95, 300).value > 0.85);
  CHECK_THROWS_AS(ci_coverage_oracle(0.05, 0.9, 0, 0.95, 10), DataError);
  OracleResult r = ci_coverage_oracle(0.05, 0.95, 200, 0.95, 200);
  CHECK(r.value >= 0.0);
  CHECK(r.value <= 1.0);
  CHECK_FALSE(r.method.empty());
  CHECK(r.cost == 200 * 200);
}
