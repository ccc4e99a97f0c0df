// Command-line front end: simulate, fit, influence, consistency, amalgamate,
// evaluate, pipeline, sweep, print-config. Exit codes: 0 success, 1 usage
// error, 2 data error, 3 numeric failure.

#include "amalgam/amalgamation.hpp"
#include "amalgam/calibration.hpp"
#include "amalgam/config.hpp"
#include "amalgam/consistency.hpp"
#include "amalgam/dataset.hpp"
#include "amalgam/evaluation.hpp"
#include "amalgam/glm.hpp"
#include "amalgam/influence.hpp"
#include "amalgam/metrics.hpp"
#include "amalgam/oracles.hpp"
#include "amalgam/predictors.hpp"
#include "amalgam/scenario.hpp"
#include "amalgam/split.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDefaultConfig = R"(# amalgam run configuration
[data]
source = scenario          # scenario | file
path =                     # csv path when source = file
schema =                   # column-role file when source = file
selective = false          # outcome observed only where decision = 1

[scenario]
name = CHo                 # CHo | CIHo | CIHe | DeP | HoF | nRnD | DeS
n = 5000
m = 6
k = 20
seed = 7
minority_fraction = 0.5
base_accuracy = 0.95
label_noise = 0.00002
severity_rate = 0.5
secondary_rate = 0.08
proxy_noise = 0.2          # severity-proxy measurement noise
need_gap = 3.0             # separation of the two need components
need_sd = 0.005            # within-component jitter of the need score
need_grade = 0.15          # logistic scale of the need-threshold draw
hard_band_mass = 1.0       # share of the severity range in the hard subgroup
hard_band_prevalence = 0.5
ciho_flip_rate = 0.75
cihe_error_lo = 0.7
cihe_error_hi = 1.0

[consistency]
delta = 0.05
gamma1 = 6
gamma2 = 0.95
gamma3 = 0.002             # 'off' disables the negligible-influence branch
influence_scale = mean-risk  # mean-risk | unit-weight

[amalgamation]
mode = full                # full | positive | negative

[models]
list = outcome,decision,amalgam,hybrid,deferral

[protocol]
repetitions = 10
train_fraction = 0.75
seed = 1
screenout_rate = 0.3
precision_points = 0.1,0.25,0.5,0.75,1.0

[output]
dir = out
)";

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw amalgam::DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw amalgam::DataError("cannot open for writing: " + path);
  out << content;
}

amalgam::ScenarioSpec scenario_from_config(const amalgam::KeyValueConfig& cfg) {
  amalgam::ScenarioSpec spec;  // defaults come from the struct itself
  spec.scenario = amalgam::parse_scenario(cfg.get("scenario.name", "CHo"));
  spec.n = cfg.get_int("scenario.n", spec.n);
  spec.m = static_cast<int>(cfg.get_int("scenario.m", spec.m));
  spec.k = static_cast<int>(cfg.get_int("scenario.k", spec.k));
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("scenario.seed", 7));
  spec.selective = cfg.get_bool("data.selective", false);
  spec.minority_fraction = cfg.get_double("scenario.minority_fraction", spec.minority_fraction);
  spec.base_accuracy = cfg.get_double("scenario.base_accuracy", spec.base_accuracy);
  spec.label_noise = cfg.get_double("scenario.label_noise", spec.label_noise);
  spec.proxy_noise = cfg.get_double("scenario.proxy_noise", spec.proxy_noise);
  spec.need_gap = cfg.get_double("scenario.need_gap", spec.need_gap);
  spec.need_sd = cfg.get_double("scenario.need_sd", spec.need_sd);
  spec.need_grade = cfg.get_double("scenario.need_grade", spec.need_grade);
  spec.severity_rate = cfg.get_double("scenario.severity_rate", spec.severity_rate);
  spec.secondary_rate = cfg.get_double("scenario.secondary_rate", spec.secondary_rate);
  spec.hard_band_mass = cfg.get_double("scenario.hard_band_mass", spec.hard_band_mass);
  spec.hard_band_prevalence =
      cfg.get_double("scenario.hard_band_prevalence", spec.hard_band_prevalence);
  spec.ciho_flip_rate = cfg.get_double("scenario.ciho_flip_rate", spec.ciho_flip_rate);
  spec.cihe_error_lo = cfg.get_double("scenario.cihe_error_lo", spec.cihe_error_lo);
  spec.cihe_error_hi = cfg.get_double("scenario.cihe_error_hi", spec.cihe_error_hi);
  return spec;
}

amalgam::ConsistencyParams params_from_config(const amalgam::KeyValueConfig& cfg) {
  amalgam::ConsistencyParams p;
  p.delta = cfg.get_double("consistency.delta", 0.05);
  p.gamma1 = cfg.get_double("consistency.gamma1", 6.0);
  p.gamma2 = cfg.get_double("consistency.gamma2", 0.95);
  const std::string g3 = cfg.get("consistency.gamma3", "0.002");
  if (g3 == "off" || g3.empty()) {
    p.gamma3.reset();
  } else {
    p.gamma3 = amalgam::parse_double(g3);
  }
  p.check();
  return p;
}

amalgam::InfluenceScale scale_from_config(const amalgam::KeyValueConfig& cfg) {
  const std::string s = cfg.get("consistency.influence_scale", "mean-risk");
  if (s == "mean-risk") return amalgam::InfluenceScale::PerMeanRisk;
  if (s == "unit-weight") return amalgam::InfluenceScale::PerUnitWeight;
  throw amalgam::DataError("unknown influence_scale: " + s);
}

amalgam::AmalgamationMode mode_from_string(const std::string& s) {
  if (s == "full") return amalgam::AmalgamationMode::Full;
  if (s == "positive" || s == "positive-only") return amalgam::AmalgamationMode::PositiveOnly;
  if (s == "negative" || s == "negative-only") return amalgam::AmalgamationMode::NegativeOnly;
  throw amalgam::UsageError("unknown amalgamation mode: " + s);
}

// Parses the --params comma list "delta,gamma1,gamma2,gamma3" (gamma3 may be
// the word 'off').
amalgam::ConsistencyParams parse_params_flag(const std::string& flag) {
  std::vector<std::string> toks;
  std::istringstream in(flag);
  std::string t;
  while (std::getline(in, t, ',')) toks.push_back(t);
  if (toks.size() != 4) {
    throw amalgam::UsageError("--params expects delta,gamma1,gamma2,gamma3");
  }
  amalgam::ConsistencyParams p;
  p.delta = amalgam::parse_double(toks[0]);
  p.gamma1 = amalgam::parse_double(toks[1]);
  p.gamma2 = amalgam::parse_double(toks[2]);
  if (toks[3] == "off") {
    p.gamma3.reset();
  } else {
    p.gamma3 = amalgam::parse_double(toks[3]);
  }
  p.check();
  return p;
}

amalgam::DecisionDataset dataset_from_config(const amalgam::KeyValueConfig& cfg,
                                             amalgam::ScenarioSpec* spec_out = nullptr) {
  const std::string source = cfg.get("data.source", "scenario");
  if (source == "scenario") {
    amalgam::ScenarioSpec spec = scenario_from_config(cfg);
    amalgam::GroundTruthBundle bundle = amalgam::generate(spec);
    if (spec_out) *spec_out = spec;
    return bundle.dataset;
  }
  if (source == "file") {
    const std::string path = cfg.require("data.path");
    const std::string schema = cfg.require("data.schema");
    std::optional<int> sel;
    if (cfg.get_bool("data.selective", false)) sel = 1;
    return amalgam::load_dataset(path, amalgam::ColumnRoles::load(schema), sel);
  }
  throw amalgam::DataError("data.source must be 'scenario' or 'file'");
}

json profiles_json(const std::vector<amalgam::InfluenceProfile>& profiles,
                   const std::vector<std::string>& case_ids, const std::string& provenance,
                   amalgam::InfluenceScale scale) {
  json j;
  j["provenance"] = provenance;
  j["scale"] = scale == amalgam::InfluenceScale::PerMeanRisk ? "mean-risk" : "unit-weight";
  json cases = json::array();
  for (size_t i = 0; i < profiles.size(); ++i) {
    const auto& p = profiles[i];
    json c;
    c["id"] = case_ids[i];
    c["prob"] = p.query_prob;
    c["m1"] = std::isnan(p.m1) ? json(nullptr) : json(p.m1);
    c["m2"] = std::isnan(p.m2) ? json(nullptr) : json(p.m2);
    c["m3"] = p.m3;
    json pe = json::array();
    for (long long h = 0; h < p.per_expert.size(); ++h) pe.push_back(p.per_expert(h));
    c["per_expert"] = pe;
    cases.push_back(c);
  }
  j["cases"] = cases;
  return j;
}

std::vector<amalgam::InfluenceProfile> profiles_from_json(const json& j) {
  std::vector<amalgam::InfluenceProfile> out;
  for (const auto& c : j.at("cases")) {
    amalgam::InfluenceProfile p;
    p.query_prob = c.at("prob").get<double>();
    const auto& pe = c.at("per_expert");
    p.per_expert.resize(static_cast<long long>(pe.size()));
    for (size_t h = 0; h < pe.size(); ++h) {
      p.per_expert(static_cast<long long>(h)) = pe[h].get<double>();
    }
    amalgam::finalize_profile(p);
    out.push_back(std::move(p));
  }
  return out;
}

json assignment_json(const amalgam::ConsistencyAssignment& assign,
                     const std::vector<std::string>& case_ids, const std::string& provenance) {
  json j;
  j["provenance"] = provenance;
  j["mode"] = assign.training_mode ? "training" : "prediction";
  json params;
  params["delta"] = assign.params_used.delta;
  params["gamma1"] = assign.params_used.gamma1;
  params["gamma2"] = assign.params_used.gamma2;
  params["gamma3"] = assign.params_used.gamma3.has_value() ? json(*assign.params_used.gamma3)
                                                           : json("off");
  j["params"] = params;
  json cases = json::array();
  for (size_t i = 0; i < assign.membership.size(); ++i) {
    json c;
    c["id"] = case_ids[i];
    c["membership"] = amalgam::membership_name(assign.membership[i]);
    c["prob"] = assign.metrics[i].probability;
    c["m1"] = std::isnan(assign.metrics[i].m1) ? json(nullptr) : json(assign.metrics[i].m1);
    c["m2"] = std::isnan(assign.metrics[i].m2) ? json(nullptr) : json(assign.metrics[i].m2);
    c["m3"] = assign.metrics[i].m3;
    cases.push_back(c);
  }
  j["cases"] = cases;
  j["count_a0"] = assign.count(amalgam::Membership::InA0);
  j["count_a1"] = assign.count(amalgam::Membership::InA1);
  return j;
}

std::vector<amalgam::EvalModel> models_from_config(const amalgam::KeyValueConfig& cfg) {
  std::vector<amalgam::EvalModel> models;
  auto names = cfg.get_string_list("models.list");
  if (names.empty()) {
    names = {"outcome", "decision", "amalgam", "hybrid", "deferral"};
  }
  for (const auto& n : names) models.push_back(amalgam::parse_eval_model(n));
  return models;
}

amalgam::EvalProtocol protocol_from_config(const amalgam::KeyValueConfig& cfg) {
  amalgam::EvalProtocol proto;
  proto.repetitions = static_cast<int>(cfg.get_int("protocol.repetitions", 10));
  proto.train_fraction = cfg.get_double("protocol.train_fraction", 0.75);
  proto.seed = static_cast<std::uint64_t>(cfg.get_int("protocol.seed", 1));
  proto.screenout_rate = cfg.get_double("protocol.screenout_rate", 0.3);
  auto pts = cfg.get_double_list("protocol.precision_points");
  if (!pts.empty()) proto.precision_points = pts;
  return proto;
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::string out_override;
};

amalgam::KeyValueConfig load_config(const CommonFlags& flags) {
  amalgam::KeyValueConfig cfg = flags.config_path.empty()
                                    ? amalgam::KeyValueConfig::parse(kDefaultConfig)
                                    : amalgam::KeyValueConfig::load(flags.config_path);
  return cfg;
}

std::string provenance_of(const amalgam::KeyValueConfig& cfg, std::uint64_t seed) {
  return "config " + cfg.hash() + " seed " + std::to_string(seed);
}

// ---------------------------------------------------------------------------

int cmd_simulate(const amalgam::ScenarioSpec& spec, const std::string& outdir) {
  amalgam::GroundTruthBundle bundle = amalgam::generate(spec);
  fs::create_directories(outdir);
  std::ostringstream prov;
  prov << "scenario " << amalgam::scenario_name(spec.scenario) << " seed " << spec.seed;
  amalgam::write_bundle(bundle, outdir + "/bundle.csv", outdir + "/manifest.txt", prov.str());
  std::cout << "wrote " << outdir << "/bundle.csv and " << outdir << "/manifest.txt\n";
  return 0;
}

int cmd_fit(const std::string& data, const std::string& schema, const std::string& target,
            const std::string& out, std::optional<double> ridge, bool no_calibrate,
            bool selective) {
  amalgam::ColumnRoles roles = amalgam::ColumnRoles::load(schema);
  amalgam::DecisionDataset ds =
      amalgam::load_dataset(data, roles, selective ? std::optional<int>(1) : std::nullopt);
  std::vector<long long> rows;
  std::vector<int> y;
  for (long long i = 0; i < ds.rows(); ++i) {
    const size_t si = static_cast<size_t>(i);
    if (target == "decision") {
      rows.push_back(i);
      y.push_back(ds.decisions[si]);
    } else if (target == "outcome") {
      if (ds.outcomes[si].has_value()) {
        rows.push_back(i);
        y.push_back(*ds.outcomes[si]);
      }
    } else if (target == "construct") {
      if (ds.construct.empty() || !ds.construct[si].has_value()) {
        throw amalgam::DataError("construct labels are not present in this dataset");
      }
      rows.push_back(i);
      y.push_back(*ds.construct[si]);
    } else {
      throw amalgam::UsageError("--target must be decision, outcome or construct");
    }
  }
  if (rows.empty()) throw amalgam::DataError("no rows carry the requested label");
  amalgam::Matrix X(static_cast<long long>(rows.size()), ds.cols());
  for (size_t r = 0; r < rows.size(); ++r) {
    X.row(static_cast<long long>(r)) = ds.features.row(rows[r]);
  }
  amalgam::Vector w = amalgam::Vector::Ones(static_cast<long long>(rows.size()));
  amalgam::CalibratedDecisionModel model;
  if (ridge.has_value()) {
    model.base = amalgam::fit(X, y, w, *ridge);
    if (!no_calibrate) {
      amalgam::Vector z = model.base.logits(X);
      std::vector<double> scores(static_cast<size_t>(z.size()));
      for (long long i = 0; i < z.size(); ++i) scores[static_cast<size_t>(i)] = z(i);
      model.calibrator = amalgam::fit_calibrator(scores, y);
    }
  } else {
    model = amalgam::fit_calibrated(X, y, w, amalgam::GlmConfig{}, !no_calibrate);
  }
  write_file(out, amalgam::serialize_calibrated(model));
  std::cout << "wrote " << out << " (ridge " << amalgam::format_double(model.base.ridge)
            << ", grad norm " << amalgam::format_double(model.base.grad_norm_at_opt) << ")\n";
  return 0;
}

int cmd_influence(const std::string& data, const std::string& schema, const std::string& model_path,
                  const std::string& out, const std::string& scale_name, bool selective) {
  amalgam::ColumnRoles roles = amalgam::ColumnRoles::load(schema);
  amalgam::DecisionDataset ds =
      amalgam::load_dataset(data, roles, selective ? std::optional<int>(1) : std::nullopt);
  amalgam::CalibratedDecisionModel model = amalgam::deserialize_calibrated(read_file(model_path));
  amalgam::InfluenceScale scale = scale_name == "unit-weight"
                                      ? amalgam::InfluenceScale::PerUnitWeight
                                      : amalgam::InfluenceScale::PerMeanRisk;
  amalgam::Vector ones = amalgam::Vector::Ones(ds.rows());
  amalgam::InfluenceEngine engine(model.base, ds.features, ds.decisions, ds.expert_ids,
                                  ds.expert_count, ones, scale);
  std::vector<amalgam::InfluenceProfile> profiles;
  profiles.reserve(static_cast<size_t>(ds.rows()));
  for (long long i = 0; i < ds.rows(); ++i) {
    profiles.push_back(engine.profile(ds.features.row(i).transpose()));
  }
  const std::string prov = "model " + amalgam::hash_hex(read_file(model_path));
  write_file(out, profiles_json(profiles, ds.case_ids, prov, scale).dump(2) + "\n");
  std::cout << "wrote " << out << " (" << profiles.size() << " cases)\n";
  return 0;
}

int cmd_consistency(const std::string& data, const std::string& schema,
                    const std::string& model_path, const std::string& profiles_path,
                    const amalgam::ConsistencyParams& params, const std::string& mode,
                    const std::string& out, bool selective) {
  amalgam::ColumnRoles roles = amalgam::ColumnRoles::load(schema);
  amalgam::DecisionDataset ds =
      amalgam::load_dataset(data, roles, selective ? std::optional<int>(1) : std::nullopt);
  amalgam::CalibratedDecisionModel model = amalgam::deserialize_calibrated(read_file(model_path));
  std::vector<amalgam::InfluenceProfile> profiles;
  if (!profiles_path.empty()) {
    profiles = profiles_from_json(json::parse(read_file(profiles_path)));
  } else {
    amalgam::Vector ones = amalgam::Vector::Ones(ds.rows());
    amalgam::InfluenceEngine engine(model.base, ds.features, ds.decisions, ds.expert_ids,
                                    ds.expert_count, ones, amalgam::InfluenceScale::PerMeanRisk);
    for (long long i = 0; i < ds.rows(); ++i) {
      profiles.push_back(engine.profile(ds.features.row(i).transpose()));
    }
  }
  const bool training = mode == "training";
  if (!training && mode != "prediction") {
    throw amalgam::UsageError("--mode must be training or prediction");
  }
  amalgam::ConsistencyAssignment assign = amalgam::build_consistency_set(
      model, ds.features, profiles, params, training ? &ds.decisions : nullptr);
  const std::string prov = "params " + amalgam::format_double(params.delta) + "," +
                           amalgam::format_double(params.gamma1) + "," +
                           amalgam::format_double(params.gamma2) + "," +
                           (params.gamma3 ? amalgam::format_double(*params.gamma3)
                                          : std::string("off"));
  write_file(out, assignment_json(assign, ds.case_ids, prov).dump(2) + "\n");
  std::cout << "wrote " << out << " (A0 " << assign.count(amalgam::Membership::InA0) << ", A1 "
            << assign.count(amalgam::Membership::InA1) << ")\n";
  return 0;
}

int cmd_amalgamate(const std::string& data, const std::string& schema,
                   const std::string& assignment_path, const std::string& mode_name,
                   const std::string& out, bool selective) {
  amalgam::ColumnRoles roles = amalgam::ColumnRoles::load(schema);
  amalgam::DecisionDataset ds =
      amalgam::load_dataset(data, roles, selective ? std::optional<int>(1) : std::nullopt);
  const json aj = json::parse(read_file(assignment_path));
  amalgam::ConsistencyAssignment assign;
  assign.params_used.gamma3.reset();
  const auto& cases = aj.at("cases");
  if (cases.size() != static_cast<size_t>(ds.rows())) {
    throw amalgam::DataError("assignment case count does not match dataset");
  }
  for (size_t i = 0; i < cases.size(); ++i) {
    if (cases[i].at("id").get<std::string>() != ds.case_ids[i]) {
      throw amalgam::DataError("assignment case ids do not line up with the dataset");
    }
    const std::string m = cases[i].at("membership").get<std::string>();
    assign.membership.push_back(m == "A0" ? amalgam::Membership::InA0
                                          : m == "A1" ? amalgam::Membership::InA1
                                                      : amalgam::Membership::Outside);
    assign.metrics.push_back({});
  }
  amalgam::AmalgamationPlan plan = amalgam::amalgamate(ds, assign, mode_from_string(mode_name));
  std::ostringstream csv;
  csv << "# assignment " << amalgam::hash_hex(read_file(assignment_path)) << "\n";
  csv << "id,label,provenance,usable\n";
  for (long long i = 0; i < ds.rows(); ++i) {
    const size_t si = static_cast<size_t>(i);
    csv << ds.case_ids[si] << ",";
    if (plan.usable[si]) csv << plan.labels[si];
    csv << ","
        << (plan.provenance[si] == amalgam::LabelProvenance::FromDecision ? "decision" : "outcome")
        << "," << static_cast<int>(plan.usable[si]) << "\n";
  }
  write_file(out, csv.str());
  std::cout << "wrote " << out << " (" << plan.amalgamated_count() << " amalgamated of "
            << plan.usable_count() << " usable)\n";
  return 0;
}

int cmd_evaluate(const amalgam::KeyValueConfig& cfg) {
  amalgam::DecisionDataset ds = dataset_from_config(cfg);
  const amalgam::EvalProtocol proto = protocol_from_config(cfg);
  const amalgam::ConsistencyParams params = params_from_config(cfg);
  const auto models = models_from_config(cfg);
  const auto mode = mode_from_string(cfg.get("amalgamation.mode", "full"));
  amalgam::EvaluationReport report = amalgam::run_evaluation(ds, models, proto, params, mode,
                                                             amalgam::GlmConfig{},
                                                             scale_from_config(cfg));
  const std::string outdir = cfg.get("output.dir", "out");
  fs::create_directories(outdir);
  const std::string prov = provenance_of(cfg, proto.seed);
  write_file(outdir + "/report.json", amalgam::report_json(report, prov).dump(2) + "\n");
  write_file(outdir + "/report.csv", amalgam::report_csv(report, prov));
  std::cout << "wrote " << outdir << "/report.json and " << outdir << "/report.csv ("
            << report.completed_runs << "/" << report.requested_runs << " repetitions)\n";
  return 0;
}

int cmd_pipeline(const amalgam::KeyValueConfig& cfg) {
  const std::string outdir = cfg.get("output.dir", "out");
  fs::create_directories(outdir);
  const amalgam::EvalProtocol proto = protocol_from_config(cfg);
  const std::string prov = provenance_of(cfg, proto.seed);
  std::string stage = "load";
  try {
    amalgam::ScenarioSpec spec;
    amalgam::DecisionDataset ds = dataset_from_config(cfg, &spec);
    if (cfg.get("data.source", "scenario") == "scenario") {
      amalgam::GroundTruthBundle bundle = amalgam::generate(spec);
      amalgam::write_bundle(bundle, outdir + "/bundle.csv", outdir + "/bundle-manifest.txt", prov);
    }

    stage = "split";
    std::mt19937_64 seed_stream(proto.seed);
    const std::uint64_t first_seed = seed_stream();
    amalgam::SplitPlan split = amalgam::monte_carlo_split(ds, proto.train_fraction, first_seed);
    {
      std::ostringstream s;
      s << "# " << prov << "\nindex,fold\n";
      for (long long i : split.train_indices) s << i << ",train\n";
      for (long long i : split.test_indices) s << i << ",test\n";
      write_file(outdir + "/split.csv", s.str());
    }

    stage = "fit-decision-model";
    amalgam::DecisionDataset train = amalgam::subset(ds, split.train_indices);
    const amalgam::ConsistencyParams params = params_from_config(cfg);
    const auto mode = mode_from_string(cfg.get("amalgamation.mode", "full"));
    amalgam::FittedStack st;
    st = amalgam::fit_stack(train, params, mode, amalgam::GlmConfig{}, scale_from_config(cfg));
    write_file(outdir + "/model-decision.txt",
               "# " + prov + "\n" + amalgam::serialize_calibrated(st.decision_model));

    stage = "influence";
    std::vector<amalgam::InfluenceProfile> profiles;
    for (long long i = 0; i < train.rows(); ++i) {
      profiles.push_back(st.engine->profile(train.features.row(i).transpose()));
    }
    write_file(outdir + "/influence.json",
               profiles_json(profiles, train.case_ids, prov, st.engine->scale()).dump(2) + "\n");

    stage = "consistency";
    write_file(outdir + "/assignment.json",
               assignment_json(st.assignment, train.case_ids, prov).dump(2) + "\n");

    stage = "amalgamate";
    {
      std::ostringstream csv;
      csv << "# " << prov << "\nid,label,provenance,usable\n";
      for (long long i = 0; i < train.rows(); ++i) {
        const size_t si = static_cast<size_t>(i);
        csv << train.case_ids[si] << ",";
        if (st.plan.usable[si]) csv << st.plan.labels[si];
        csv << ","
            << (st.plan.provenance[si] == amalgam::LabelProvenance::FromDecision ? "decision"
                                                                                 : "outcome")
            << "," << static_cast<int>(st.plan.usable[si]) << "\n";
      }
      write_file(outdir + "/amalgamation.csv", csv.str());
    }

    stage = "fit-leveraged-models";
    write_file(outdir + "/model-amalgam.txt",
               "# " + prov + "\n" + amalgam::serialize_calibrated(st.amalgam_model));
    if (st.outcome_model) {
      write_file(outdir + "/model-outcome.txt",
                 "# " + prov + "\n" + amalgam::serialize_calibrated(*st.outcome_model));
    }
    if (st.outside_outcome_model) {
      write_file(outdir + "/model-outcome-outside.txt",
                 "# " + prov + "\n" + amalgam::serialize_calibrated(*st.outside_outcome_model));
    }
    {
      std::ostringstream man;
      man << "format = amalgam-predictor-bundle/1\n";
      man << "provenance = " << prov << "\n";
      man << "decision_model = model-decision.txt\n";
      man << "amalgam_model = model-amalgam.txt\n";
      if (st.outcome_model) man << "outcome_model = model-outcome.txt\n";
      if (st.outside_outcome_model) man << "outside_outcome_model = model-outcome-outside.txt\n";
      man << "delta = " << amalgam::format_double(params.delta) << "\n";
      man << "gamma1 = " << amalgam::format_double(params.gamma1) << "\n";
      man << "gamma2 = " << amalgam::format_double(params.gamma2) << "\n";
      man << "gamma3 = "
          << (params.gamma3 ? amalgam::format_double(*params.gamma3) : std::string("off")) << "\n";
      man << "amalgamation_mode = " << amalgam::amalgamation_mode_name(mode) << "\n";
      write_file(outdir + "/predictor-manifest.txt", man.str());
    }

    stage = "evaluate";
    const auto models = models_from_config(cfg);
    amalgam::EvaluationReport report = amalgam::run_evaluation(
        ds, models, proto, params, mode, amalgam::GlmConfig{}, scale_from_config(cfg));
    write_file(outdir + "/report.json", amalgam::report_json(report, prov).dump(2) + "\n");
    write_file(outdir + "/report.csv", amalgam::report_csv(report, prov));
    if (!report.failures.empty()) {
      std::ostringstream f;
      f << "# " << prov << "\n";
      for (const auto& x : report.failures) f << x << "\n";
      write_file(outdir + "/failures.txt", f.str());
    }

    std::ostringstream man;
    man << "format = amalgam-run-manifest/1\n";
    man << "provenance = " << prov << "\n";
    man << "artifacts = bundle.csv,split.csv,model-decision.txt,influence.json,assignment.json,"
           "amalgamation.csv,model-amalgam.txt,model-outcome.txt,model-outcome-outside.txt,"
           "predictor-manifest.txt,report.json,report.csv\n";
    man << "completed_repetitions = " << report.completed_runs << "\n";
    man << "requested_repetitions = " << report.requested_runs << "\n";
    write_file(outdir + "/run-manifest.txt", man.str());
    std::cout << "pipeline complete: " << outdir << "/run-manifest.txt\n";
    return 0;
  } catch (const amalgam::Error&) {
    std::cerr << "pipeline failed at stage: " << stage << "\n";
    throw;
  }
}

int cmd_sweep(const amalgam::KeyValueConfig& cfg, const std::string& param,
              const std::vector<double>& values) {
  if (values.empty()) throw amalgam::UsageError("sweep needs at least one value");
  if (param != "delta" && param != "gamma1" && param != "gamma2" && param != "gamma3") {
    throw amalgam::UsageError("sweep parameter must be delta, gamma1, gamma2 or gamma3");
  }
  amalgam::DecisionDataset ds = dataset_from_config(cfg);
  const amalgam::EvalProtocol proto = protocol_from_config(cfg);
  const auto mode = mode_from_string(cfg.get("amalgamation.mode", "full"));
  const amalgam::ConsistencyParams base_params = params_from_config(cfg);

  std::mt19937_64 seed_stream(proto.seed);
  amalgam::SplitPlan split = amalgam::monte_carlo_split(ds, proto.train_fraction, seed_stream());
  amalgam::DecisionDataset train = amalgam::subset(ds, split.train_indices);
  amalgam::DecisionDataset test = amalgam::subset(ds, split.test_indices);

  // The decision model and influence profiles do not depend on the swept
  // parameter; compute once and reuse.
  amalgam::Vector ones = amalgam::Vector::Ones(train.rows());
  amalgam::CalibratedDecisionModel model_h =
      amalgam::fit_calibrated(train.features, train.decisions, ones);
  auto engine = std::make_shared<amalgam::InfluenceEngine>(
      model_h.base, train.features, train.decisions, train.expert_ids, train.expert_count, ones,
      scale_from_config(cfg));
  std::vector<amalgam::InfluenceProfile> profiles;
  for (long long i = 0; i < train.rows(); ++i) {
    profiles.push_back(engine->profile(train.features.row(i).transpose()));
  }

  struct SweepRow {
    double value;
    double fraction;
    double auc;
  };
  std::vector<SweepRow> rows;
  for (double v : values) {
    amalgam::ConsistencyParams p = base_params;
    if (param == "delta") p.delta = v;
    else if (param == "gamma1") p.gamma1 = v;
    else if (param == "gamma2") p.gamma2 = v;
    else p.gamma3 = v;
    p.check();
    amalgam::ConsistencyAssignment assign =
        amalgam::build_consistency_set(model_h, train.features, profiles, p, &train.decisions);
    amalgam::AmalgamationPlan plan = amalgam::amalgamate(train, assign, mode);
    double auc_val = std::numeric_limits<double>::quiet_NaN();
    try {
      amalgam::CalibratedDecisionModel f_a = amalgam::fit_amalgam_model(train, plan);
      std::vector<double> scores;
      std::vector<int> labels;
      for (long long i = 0; i < test.rows(); ++i) {
        const size_t si = static_cast<size_t>(i);
        int label;
        if (test.has_construct()) label = *test.construct[si];
        else if (test.outcomes[si].has_value()) label = *test.outcomes[si];
        else continue;
        labels.push_back(label);
        scores.push_back(f_a.predict_proba(test.features.row(i).transpose()));
      }
      auc_val = amalgam::auc(scores, labels);
    } catch (const amalgam::Error&) {
      // degenerate label view at this parameter value; fraction still reported
    }
    rows.push_back({v, assign.member_fraction(), auc_val});
  }

  // Monotonicity direction per parameter: delta and gamma3 relax upward,
  // gamma1 and gamma2 tighten upward.
  bool monotone = true;
  for (size_t i = 1; i < rows.size(); ++i) {
    if (values[i] < values[i - 1]) continue;  // unordered sweeps skip the check
    if (param == "delta" || param == "gamma3") {
      if (rows[i].fraction < rows[i - 1].fraction - 1e-12) monotone = false;
    } else {
      if (rows[i].fraction > rows[i - 1].fraction + 1e-12) monotone = false;
    }
  }

  const std::string outdir = cfg.get("output.dir", "out");
  fs::create_directories(outdir);
  const std::string prov = provenance_of(cfg, proto.seed);
  std::ostringstream csv;
  csv << "# " << prov << "\n";
  csv << "param,value,amalgamated_fraction,amalgam_auc\n";
  for (const auto& r : rows) {
    csv << param << "," << amalgam::format_double(r.value) << ","
        << amalgam::format_double(r.fraction) << ","
        << (std::isnan(r.auc) ? "undefined" : amalgam::format_double(r.auc)) << "\n";
  }
  csv << "monotonicity," << (monotone ? "pass" : "fail") << ",,\n";
  write_file(outdir + "/sweep-" + param + ".csv", csv.str());
  std::cout << "wrote " << outdir << "/sweep-" << param << ".csv (monotonicity "
            << (monotone ? "pass" : "fail") << ")\n";
  return monotone ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expert-consistency estimation and label amalgamation toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic decision-making bundle");
  std::string sim_scenario = "CHo", sim_out = "out";
  amalgam::ScenarioSpec sim_spec;
  std::string sim_error_range;
  sim->add_option("--scenario", sim_scenario, "CHo|CIHo|CIHe|DeP|HoF|nRnD|DeS");
  sim->add_option("--n", sim_spec.n, "case count");
  sim->add_option("--m", sim_spec.m, "feature count");
  sim->add_option("--k", sim_spec.k, "expert count");
  sim->add_option("--seed", sim_spec.seed, "generator seed");
  sim->add_option("--out", sim_out, "output directory");
  sim->add_flag("--selective", sim_spec.selective, "censor outcomes where decision = 0");
  sim->add_option("--minority-fraction", sim_spec.minority_fraction, "group share");
  sim->add_option("--base-accuracy", sim_spec.base_accuracy, "expert accuracy");
  sim->add_option("--label-noise", sim_spec.label_noise, "rule label flip rate");
  sim->add_option("--proxy-noise", sim_spec.proxy_noise, "covariate measurement noise sd");
  sim->add_option("--severity-rate", sim_spec.severity_rate, "P(severity rule)");
  sim->add_option("--secondary-rate", sim_spec.secondary_rate, "P(secondary rule)");
  sim->add_option("--band-mass", sim_spec.hard_band_mass, "hard subgroup mass");
  sim->add_option("--band-prevalence", sim_spec.hard_band_prevalence, "severity prevalence in band");
  sim->add_option("--need-gap", sim_spec.need_gap, "need component separation");
  sim->add_option("--need-sd", sim_spec.need_sd, "need score jitter");
  sim->add_option("--need-grade", sim_spec.need_grade, "need threshold logistic scale");
  sim->add_option("--flip-rate", sim_spec.ciho_flip_rate, "CIHo flip fraction");
  sim->add_option("--error-range", sim_error_range, "CIHe per-expert error range lo,hi");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a calibrated decision/outcome model");
  std::string fit_data, fit_schema, fit_target = "decision", fit_out = "model.txt";
  double fit_ridge = -1.0;
  bool fit_nocal = false, fit_selective = false;
  fit_cmd->add_option("--data", fit_data)->required();
  fit_cmd->add_option("--schema", fit_schema)->required();
  fit_cmd->add_option("--target", fit_target, "decision|outcome|construct");
  fit_cmd->add_option("--out", fit_out);
  fit_cmd->add_option("--ridge", fit_ridge, "fixed ridge (omit for the escalation grid)");
  fit_cmd->add_flag("--no-calibrate", fit_nocal);
  fit_cmd->add_flag("--selective", fit_selective, "enforce outcome-censoring consistency");

  // influence
  auto* inf = app.add_subcommand("influence", "per-expert influence profiles for every case");
  std::string inf_data, inf_schema, inf_model, inf_out = "influence.json", inf_scale = "mean-risk";
  bool inf_selective = false;
  inf->add_option("--data", inf_data)->required();
  inf->add_option("--schema", inf_schema)->required();
  inf->add_option("--model", inf_model)->required();
  inf->add_option("--out", inf_out);
  inf->add_option("--scale", inf_scale, "mean-risk|unit-weight");
  inf->add_flag("--selective", inf_selective);

  // consistency
  auto* cons = app.add_subcommand("consistency", "build the high-consistency assignment");
  std::string cons_data, cons_schema, cons_model, cons_profiles, cons_mode = "training",
              cons_out = "assignment.json", cons_params = "0.05,6,0.95,0.002";
  bool cons_selective = false;
  cons->add_option("--data", cons_data)->required();
  cons->add_option("--schema", cons_schema)->required();
  cons->add_option("--model", cons_model)->required();
  cons->add_option("--profiles", cons_profiles, "influence profiles json (recomputed when absent)");
  cons->add_option("--params", cons_params, "delta,gamma1,gamma2,gamma3 ('off' allowed)");
  cons->add_option("--mode", cons_mode, "training|prediction");
  cons->add_option("--out", cons_out);
  cons->add_flag("--selective", cons_selective);

  // amalgamate
  auto* amal = app.add_subcommand("amalgamate", "build amalgamated training labels");
  std::string amal_data, amal_schema, amal_assign, amal_mode = "full", amal_out = "amalgamation.csv";
  bool amal_selective = false;
  amal->add_option("--data", amal_data)->required();
  amal->add_option("--schema", amal_schema)->required();
  amal->add_option("--assignment", amal_assign)->required();
  amal->add_option("--mode", amal_mode, "full|positive|negative");
  amal->add_option("--out", amal_out);
  amal->add_flag("--selective", amal_selective);

  // evaluate / pipeline / sweep / print-config
  auto* eval = app.add_subcommand("evaluate", "Monte-Carlo evaluation of the model set");
  auto* pipe = app.add_subcommand("pipeline", "end-to-end run with all intermediate artifacts");
  auto* sweep = app.add_subcommand("sweep", "consistency-parameter sweep");
  auto* pc = app.add_subcommand("print-config", "print the default configuration");

  CommonFlags eval_flags, pipe_flags, sweep_flags;
  std::string sweep_param = "delta", sweep_values = "";
  long long seed_flag = -1;
  std::string out_flag;
  eval->add_option("--config", eval_flags.config_path);
  eval->add_option("--seed", seed_flag, "protocol seed override");
  eval->add_option("--out", out_flag, "output directory override");
  pipe->add_option("--config", pipe_flags.config_path);
  pipe->add_option("--seed", seed_flag, "protocol seed override");
  pipe->add_option("--out", out_flag, "output directory override");
  sweep->add_option("--config", sweep_flags.config_path);
  sweep->add_option("--param", sweep_param, "delta|gamma1|gamma2|gamma3")->required();
  sweep->add_option("--values", sweep_values, "comma list of values")->required();
  sweep->add_option("--out", out_flag, "output directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto apply_overrides = [&](amalgam::KeyValueConfig cfg) {
      std::string text = cfg.text();
      if (seed_flag >= 0) text += "\n[protocol]\nseed = " + std::to_string(seed_flag) + "\n";
      if (!out_flag.empty()) text += "\n[output]\ndir = " + out_flag + "\n";
      return amalgam::KeyValueConfig::parse(text);
    };
    if (sim->parsed()) {
      sim_spec.scenario = amalgam::parse_scenario(sim_scenario);
      if (!sim_error_range.empty()) {
        auto comma = sim_error_range.find(',');
        if (comma == std::string::npos) {
          throw amalgam::UsageError("--error-range expects lo,hi");
        }
        sim_spec.cihe_error_lo = amalgam::parse_double(sim_error_range.substr(0, comma));
        sim_spec.cihe_error_hi = amalgam::parse_double(sim_error_range.substr(comma + 1));
      }
      return cmd_simulate(sim_spec, sim_out);
    }
    if (fit_cmd->parsed()) {
      return cmd_fit(fit_data, fit_schema, fit_target, fit_out,
                     fit_ridge >= 0 ? std::optional<double>(fit_ridge) : std::nullopt, fit_nocal,
                     fit_selective);
    }
    if (inf->parsed()) {
      return cmd_influence(inf_data, inf_schema, inf_model, inf_out, inf_scale, inf_selective);
    }
    if (cons->parsed()) {
      return cmd_consistency(cons_data, cons_schema, cons_model, cons_profiles,
                             parse_params_flag(cons_params), cons_mode, cons_out, cons_selective);
    }
    if (amal->parsed()) {
      return cmd_amalgamate(amal_data, amal_schema, amal_assign, amal_mode, amal_out,
                            amal_selective);
    }
    if (eval->parsed()) return cmd_evaluate(apply_overrides(load_config(eval_flags)));
    if (pipe->parsed()) return cmd_pipeline(apply_overrides(load_config(pipe_flags)));
    if (sweep->parsed()) {
      std::vector<double> values;
      std::istringstream in(sweep_values);
      std::string tok;
      while (std::getline(in, tok, ',')) {
        if (!tok.empty()) values.push_back(amalgam::parse_double(tok));
      }
      return cmd_sweep(apply_overrides(load_config(sweep_flags)), sweep_param, values);
    }
    if (pc->parsed()) {
      std::cout << kDefaultConfig;
      return 0;
    }
    throw amalgam::UsageError("no subcommand given");
  } catch (const amalgam::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const amalgam::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const amalgam::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
