#include "amalgam/dataset.hpp"
#include "amalgam/split.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace amalgam;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

ColumnRoles basic_roles() {
  return ColumnRoles::parse(
      "features = f1,f2\n"
      "decision = d\n"
      "expert = e\n"
      "outcome = y\n");
}

}  // namespace

TEST_CASE("expert ids are re-indexed densely keeping original names") {
  const std::string path = write_temp("ds_reindex.csv",
                                      "f1,f2,d,e,y\n"
                                      "0.1,1,1,7,1\n"
                                      "0.2,0,0,7,0\n"
                                      "0.3,1,1,12,1\n");
  DecisionDataset ds = load_dataset(path, basic_roles());
  REQUIRE(ds.expert_count == 2);
  CHECK(ds.expert_ids == std::vector<int>{1, 1, 2});
  CHECK(ds.expert_names == std::vector<std::string>{"7", "12"});
}

TEST_CASE("selective mode rejects an observed outcome on a screened-out row") {
  const std::string path = write_temp("ds_selective.csv",
                                      "f1,f2,d,e,y\n"
                                      "0.1,1,1,1,1\n"
                                      "0.2,0,0,2,1\n");
  REQUIRE_THROWS_WITH(load_dataset(path, basic_roles(), 1),
                      Catch::Matchers::ContainsSubstring("row 1"));
}

TEST_CASE("selective mode requires an outcome on every screened-in row") {
  const std::string path = write_temp("ds_selective2.csv",
                                      "f1,f2,d,e,y\n"
                                      "0.1,1,1,1,\n"
                                      "0.2,0,0,2,\n");
  REQUIRE_THROWS_AS(load_dataset(path, basic_roles(), 1), DataError);
}

TEST_CASE("missing required column and malformed labels are rejected") {
  const std::string no_decision = write_temp("ds_nodec.csv", "f1,f2,e,y\n0.1,1,1,1\n");
  CHECK_THROWS_WITH(load_dataset(no_decision, basic_roles()),
                    Catch::Matchers::ContainsSubstring("'d'"));
  const std::string bad_label = write_temp("ds_badlabel.csv",
                                           "f1,f2,d,e,y\n0.1,1,2,1,1\n");
  CHECK_THROWS_AS(load_dataset(bad_label, basic_roles()), DataError);
  const std::string empty = write_temp("ds_empty.csv", "");
  CHECK_THROWS_AS(load_dataset(empty, basic_roles()), DataError);
  const std::string header_only = write_temp("ds_header.csv", "f1,f2,d,e,y\n");
  CHECK_THROWS_AS(load_dataset(header_only, basic_roles()), DataError);
}

TEST_CASE("large files load without truncation") {
  // Row capacity at production referral-volume scale, narrow feature block.
  {
    const std::string path = (std::filesystem::temp_directory_path() / "ds_tall.csv").string();
    std::ofstream out(path);
    out << "f1,f2,d,e,y\n";
    for (long long i = 0; i < 46544; ++i) {
      out << (i % 7) * 0.25 << "," << (i % 3) << "," << (i % 2) << "," << (i % 40) << ","
          << (i % 2) << "\n";
    }
    out.close();
    DecisionDataset ds = load_dataset(path, basic_roles());
    CHECK(ds.rows() == 46544);
    std::filesystem::remove(path);
  }
  // Column capacity beyond 800 features.
  {
    const std::string path = (std::filesystem::temp_directory_path() / "ds_wide.csv").string();
    std::ofstream out(path);
    for (int j = 0; j < 801; ++j) out << "x" << j << ",";
    out << "d,e\n";
    for (int i = 0; i < 200; ++i) {
      for (int j = 0; j < 801; ++j) out << ((i + j) % 5) * 0.1 << ",";
      out << (i % 2) << "," << (i % 6) << "\n";
    }
    out.close();
    ColumnRoles roles = ColumnRoles::parse("features = *\ndecision = d\nexpert = e\n");
    DecisionDataset ds = load_dataset(path, roles);
    CHECK(ds.cols() == 801);
    CHECK(ds.rows() == 200);
    std::filesystem::remove(path);
  }
}

TEST_CASE("write/load round trip preserves semantic content") {
  const std::string path = write_temp("ds_rt_src.csv",
                                      "f1,f2,d,e,y\n"
                                      "0.125,1,1,7,1\n"
                                      "-3.5,0,0,7,\n"
                                      "0.25,1,1,12,0\n");
  DecisionDataset ds = load_dataset(path, basic_roles());
  const std::string out = (std::filesystem::temp_directory_path() / "ds_rt_out.csv").string();
  write_dataset(ds, out);
  ColumnRoles roles = ColumnRoles::parse(
      "features = f1,f2\ndecision = decision\nexpert = expert\noutcome = outcome\nid = id\n");
  DecisionDataset back = load_dataset(out, roles);
  REQUIRE(back.rows() == ds.rows());
  CHECK(back.features == ds.features);
  CHECK(back.decisions == ds.decisions);
  CHECK(back.outcomes == ds.outcomes);
  CHECK(back.expert_ids == ds.expert_ids);
  CHECK(back.expert_names == ds.expert_names);
}

namespace {

DecisionDataset synthetic_dataset(long long n, int k, std::uint64_t seed) {
  DecisionDataset ds;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  ds.features.resize(n, 2);
  for (long long i = 0; i < n; ++i) {
    ds.features(i, 0) = gauss(rng);
    ds.features(i, 1) = gauss(rng);
    ds.decisions.push_back(i % 2 == 0 ? 1 : 0);
    ds.outcomes.emplace_back(static_cast<int>(i % 3 == 0));
    ds.expert_ids.push_back(static_cast<int>(i % k) + 1);
    ds.case_ids.push_back(std::to_string(i));
  }
  ds.expert_count = k;
  for (int h = 1; h <= k; ++h) ds.expert_names.push_back(std::to_string(h));
  ds.feature_names = {"f1", "f2"};
  ds.validate();
  return ds;
}

}  // namespace

TEST_CASE("monte carlo split sizes and representation") {
  DecisionDataset ds = synthetic_dataset(100, 5, 42);
  SplitPlan plan = monte_carlo_split(ds, 0.75, 7);
  const long long tr = static_cast<long long>(plan.train_indices.size());
  CHECK(tr >= 74);
  CHECK(tr <= 76);
  CHECK(plan.train_indices.size() + plan.test_indices.size() == 100);
  plan.check(ds);  // every expert on both sides
}

TEST_CASE("single expert with two cases splits one each side") {
  DecisionDataset ds = synthetic_dataset(2, 1, 3);
  SplitPlan plan = monte_carlo_split(ds, 0.75, 9);
  CHECK(plan.train_indices.size() == 1);
  CHECK(plan.test_indices.size() == 1);
}

TEST_CASE("splits are reproducible and seed-sensitive") {
  DecisionDataset ds = synthetic_dataset(60, 4, 5);
  SplitPlan a = monte_carlo_split(ds, 0.7, 1234);
  SplitPlan b = monte_carlo_split(ds, 0.7, 1234);
  CHECK(a.train_indices == b.train_indices);
  CHECK(a.test_indices == b.test_indices);
  SplitPlan c = monte_carlo_split(ds, 0.7, 1235);
  CHECK(a.train_indices != c.train_indices);
}

TEST_CASE("expert representation holds across ten repetitions") {
  DecisionDataset ds = synthetic_dataset(200, 8, 11);
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    SplitPlan plan = monte_carlo_split(ds, 0.75, 1000 + rep);
    plan.check(ds);
  }
}

TEST_CASE("split rejects invalid inputs naming the offender") {
  DecisionDataset ds = synthetic_dataset(10, 2, 1);
  CHECK_THROWS_AS(monte_carlo_split(ds, 1.5, 0), DataError);
  CHECK_THROWS_AS(monte_carlo_split(ds, 0.0, 0), DataError);

  DecisionDataset lone = synthetic_dataset(5, 2, 2);
  for (size_t i = 0; i < lone.expert_ids.size(); ++i) lone.expert_ids[i] = 1;
  lone.expert_ids[3] = 2;  // expert 2 keeps a single case
  REQUIRE_THROWS_WITH(monte_carlo_split(lone, 0.5, 0),
                      Catch::Matchers::ContainsSubstring("2"));
}

TEST_CASE("linkage keys keep rows in the same fold") {
  DecisionDataset ds = synthetic_dataset(40, 4, 9);
  ds.linkage.clear();
  for (long long i = 0; i < 40; ++i) ds.linkage.push_back("call" + std::to_string(i / 4));
  SplitPlan plan = monte_carlo_split(ds, 0.5, 77);
  std::set<std::string> train_keys, test_keys;
  for (long long i : plan.train_indices) train_keys.insert(ds.linkage[static_cast<size_t>(i)]);
  for (long long i : plan.test_indices) test_keys.insert(ds.linkage[static_cast<size_t>(i)]);
  for (const auto& k : train_keys) CHECK_FALSE(test_keys.count(k));
}
