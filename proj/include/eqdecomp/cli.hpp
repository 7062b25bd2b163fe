#pragma once

// Batch front end: declarative run configuration (YAML), cohort ingestion,
// pipeline dispatch, and the JSON + text report. Requires yaml-cpp and
// nlohmann_json in addition to the core headers.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "csv.hpp"
#include "dgp.hpp"
#include "estimator.hpp"
#include "montecarlo.hpp"
#include "reductions.hpp"

namespace eqdecomp {

inline constexpr std::string_view kVersion = "0.1.0";

struct RunConfig {
  std::string input;
  std::string output = "report";  // writes <output>.json and <output>.txt
  std::uint64_t seed = 0;

  RoleBindings roles;
  std::map<std::string, std::vector<std::string>> levels;
  std::vector<std::string> categorical;

  std::optional<AllowabilityPartition> partition;
  std::optional<int> preset;
  std::vector<TaggedVariable> schema;

  Standardization standardization = Standardization::Pooled;
  Backend backend = Backend::RMPW;
  ModelConfig models;
  std::optional<BootstrapConfig> bootstrap;
  std::optional<double> truncation_percentile;
  bool strict_positivity = false;

  std::size_t draws = 100'000;
  Factorization factorization = Factorization::Standard;

  std::size_t simulate_n = 5000;
  ScmConfig scm;

  /// The partition in force: explicit, or the preset applied to the schema.
  AllowabilityPartition effective_partition() const {
    if (partition.has_value() == preset.has_value())
      throw ValidationError("configuration needs exactly one of 'partition' and 'preset'");
    if (partition) return *partition;
    if (schema.empty()) throw ValidationError("'preset' needs a 'schema' tagging the covariates");
    return eqdecomp::preset(*preset, schema);
  }
};

inline std::string_view to_string(Factorization f) {
  return f == Factorization::Standard ? "standard" : "alternate";
}

inline Factorization parse_factorization(std::string_view s) {
  if (s == "standard") return Factorization::Standard;
  if (s == "alternate") return Factorization::Alternate;
  throw ValidationError("unknown factorization '" + std::string(s) + "'");
}

inline std::string_view to_string(CovariateTag t) {
  switch (t) {
    case CovariateTag::Demographic: return "demographic";
    case CovariateTag::Clinical: return "clinical";
    case CovariateTag::Socioeconomic: return "socioeconomic";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// YAML

namespace detail {

template <typename T>
T yaml_as(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ValidationError("configuration key '" + key + "' has the wrong type");
  }
}

inline std::vector<std::string> yaml_strings(const YAML::Node& n, const std::string& key) {
  if (!n || n.IsNull()) return {};
  if (!n.IsSequence()) throw ValidationError("configuration key '" + key + "' must be a list");
  std::vector<std::string> out;
  for (const auto& x : n) out.push_back(yaml_as<std::string>(x, key));
  return out;
}

inline void check_keys(const YAML::Node& n, const std::string& where, std::initializer_list<std::string_view> known) {
  if (!n.IsMap()) throw ValidationError("'" + where + "' must be a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("unknown configuration key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

inline void read_coefficients(const YAML::Node& n, const std::string& key, Coefficients& c) {
  if (!n) return;
  check_keys(n, key, {"intercept", "race", "age", "sex", "edu", "ins", "dia", "u"});
  auto get = [&](const char* k, double& v) {
    if (n[k]) v = yaml_as<double>(n[k], key + "." + k);
  };
  get("intercept", c.intercept);
  get("race", c.race);
  get("age", c.age);
  get("sex", c.sex);
  get("edu", c.edu);
  get("ins", c.ins);
  get("dia", c.dia);
  get("u", c.u);
}

inline ScmConfig read_scm(const YAML::Node& n) {
  ScmConfig c;
  if (!n) return c;
  if (n.IsScalar()) {
    const auto name = n.as<std::string>();
    if (name == "reference") return ScmConfig::reference();
    if (name == "latent_covariates") return ScmConfig::latent_covariates();
    throw ValidationError("unknown generator '" + name + "' (expected reference or latent_covariates)");
  }
  check_keys(n, "simulate.scm",
             {"base", "r0_label", "r1_label", "p_r0", "age", "sex", "edu", "ins", "dia", "l1", "sigma_u",
              "sigma_l1", "m", "m_stage", "m_race_edu", "m_race_ins", "l2", "l2_l1", "l2_m", "sigma_l2",
              "threshold", "stage_cut", "select", "without_race"});
  if (n["base"]) c = read_scm(n["base"]);
  auto num = [&](const char* k, double& v) {
    if (n[k]) v = yaml_as<double>(n[k], std::string("simulate.scm.") + k);
  };
  if (n["r0_label"]) c.r0_label = yaml_as<std::string>(n["r0_label"], "simulate.scm.r0_label");
  if (n["r1_label"]) c.r1_label = yaml_as<std::string>(n["r1_label"], "simulate.scm.r1_label");
  num("p_r0", c.p_r0);
  read_coefficients(n["age"], "simulate.scm.age", c.age);
  read_coefficients(n["sex"], "simulate.scm.sex", c.sex);
  read_coefficients(n["edu"], "simulate.scm.edu", c.edu);
  read_coefficients(n["ins"], "simulate.scm.ins", c.ins);
  read_coefficients(n["dia"], "simulate.scm.dia", c.dia);
  read_coefficients(n["l1"], "simulate.scm.l1", c.l1);
  read_coefficients(n["m"], "simulate.scm.m", c.m);
  read_coefficients(n["l2"], "simulate.scm.l2", c.l2);
  num("sigma_u", c.sigma_u);
  num("sigma_l1", c.sigma_l1);
  num("m_stage", c.m_stage);
  num("m_race_edu", c.m_race_edu);
  num("m_race_ins", c.m_race_ins);
  num("l2_l1", c.l2_l1);
  num("l2_m", c.l2_m);
  num("sigma_l2", c.sigma_l2);
  num("threshold", c.threshold);
  num("stage_cut", c.stage_cut);
  if (n["select"]) c.select = yaml_as<bool>(n["select"], "simulate.scm.select");
  if (n["without_race"] && yaml_as<bool>(n["without_race"], "simulate.scm.without_race")) c = c.without_race();
  c.validate();
  return c;
}

inline void emit_coefficients(YAML::Emitter& e, const char* key, const Coefficients& c) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginMap;
  e << YAML::Key << "intercept" << YAML::Value << c.intercept << YAML::Key << "race" << YAML::Value << c.race
    << YAML::Key << "age" << YAML::Value << c.age << YAML::Key << "sex" << YAML::Value << c.sex << YAML::Key
    << "edu" << YAML::Value << c.edu << YAML::Key << "ins" << YAML::Value << c.ins << YAML::Key << "dia"
    << YAML::Value << c.dia << YAML::Key << "u" << YAML::Value << c.u;
  e << YAML::EndMap;
}

inline void emit_strings(YAML::Emitter& e, const std::vector<std::string>& v) {
  e << YAML::Flow << YAML::BeginSeq;
  for (const auto& s : v) e << s;
  e << YAML::EndSeq;
}

}  // namespace detail

inline RunConfig parse_config(const YAML::Node& root) {
  using namespace detail;
  if (!root || root.IsNull()) throw ValidationError("configuration is empty");
  check_keys(root, "",
             {"input", "output", "seed", "roles", "levels", "categorical", "partition", "preset", "schema",
              "standardization", "backend", "models", "bootstrap", "truncation_percentile", "positivity",
              "montecarlo", "simulate"});
  RunConfig c;
  if (root["input"]) c.input = yaml_as<std::string>(root["input"], "input");
  if (root["output"]) c.output = yaml_as<std::string>(root["output"], "output");
  if (root["seed"]) c.seed = yaml_as<std::uint64_t>(root["seed"], "seed");

  const auto roles = root["roles"];
  if (!roles) throw ValidationError("configuration needs a 'roles' section");
  check_keys(roles, "roles", {"race", "r0", "r0prime", "target", "outcome", "selection"});
  for (const char* k : {"race", "r0", "r0prime", "target", "outcome"})
    if (!roles[k]) throw ValidationError(std::string("configuration key 'roles.") + k + "' is required");
  c.roles.race = {yaml_as<std::string>(roles["race"], "roles.race"), yaml_as<std::string>(roles["r0"], "roles.r0"),
                  yaml_as<std::string>(roles["r0prime"], "roles.r0prime")};
  c.roles.target = yaml_as<std::string>(roles["target"], "roles.target");
  c.roles.outcome = yaml_as<std::string>(roles["outcome"], "roles.outcome");
  if (const auto s = roles["selection"]; s && !s.IsNull()) {
    check_keys(s, "roles.selection", {"column", "level"});
    c.roles.selection = SelectionBinding{yaml_as<std::string>(s["column"], "roles.selection.column"),
                                         yaml_as<std::string>(s["level"], "roles.selection.level")};
  }

  if (const auto lv = root["levels"]; lv && !lv.IsNull() && !lv.IsMap())
    throw ValidationError("'levels' must map columns to level lists");
  if (const auto lv = root["levels"]; lv && lv.IsMap())
    for (const auto& kv : lv) {
      const auto name = kv.first.as<std::string>();
      c.levels[name] = yaml_strings(kv.second, "levels." + name);
    }
  c.categorical = yaml_strings(root["categorical"], "categorical");

  if (const auto p = root["partition"]; p && !p.IsNull()) {
    check_keys(p, "partition", {"outcome_allowable", "target_allowable", "non_allowable"});
    AllowabilityPartition part;
    part.outcome_allowable = yaml_strings(p["outcome_allowable"], "partition.outcome_allowable");
    part.target_allowable_extra = yaml_strings(p["target_allowable"], "partition.target_allowable");
    part.non_allowable = yaml_strings(p["non_allowable"], "partition.non_allowable");
    c.partition = part;
  }
  if (const auto p = root["preset"]; p && !p.IsNull())
    c.preset = static_cast<int>(parse_preset(yaml_as<std::string>(p, "preset")));
  if (const auto s = root["schema"]; s && !s.IsNull()) {
    if (!s.IsMap()) throw ValidationError("'schema' must map covariates to tags");
    for (const auto& kv : s)
      c.schema.push_back({kv.first.as<std::string>(), parse_tag(yaml_as<std::string>(kv.second, "schema"))});
  }
  if (root["standardization"])
    c.standardization = parse_standardization(yaml_as<std::string>(root["standardization"], "standardization"));
  if (root["backend"]) c.backend = parse_backend(yaml_as<std::string>(root["backend"], "backend"));

  if (const auto m = root["models"]; m && !m.IsNull()) {
    if (!m.IsMap()) throw ValidationError("'models' must be a mapping");
    const auto known = all_model_roles();
    for (const auto& kv : m) {
      const auto key = kv.first.as<std::string>();
      if (key == "default_family") {
        c.models.default_family = parse_family(yaml_as<std::string>(kv.second, "models.default_family"));
        continue;
      }
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw ValidationError("unknown model role 'models." + key + "'");
      check_keys(kv.second, "models." + key, {"family", "predictors", "interactions"});
      ModelOverride o;
      if (kv.second["family"]) o.family = parse_family(yaml_as<std::string>(kv.second["family"], "models." + key + ".family"));
      if (kv.second["predictors"]) o.predictors = yaml_strings(kv.second["predictors"], "models." + key + ".predictors");
      if (const auto it = kv.second["interactions"]; it && !it.IsNull()) {
        if (!it.IsSequence()) throw ValidationError("'models." + key + ".interactions' must be a list of lists");
        for (const auto& term : it) o.interactions.push_back(yaml_strings(term, "models." + key + ".interactions"));
      }
      c.models.roles[key] = o;
    }
  }

  if (const auto b = root["bootstrap"]; b && !b.IsNull()) {
    check_keys(b, "bootstrap", {"replicates", "level", "stratify_by_race"});
    BootstrapConfig boot;
    if (b["replicates"]) boot.replicates = yaml_as<std::size_t>(b["replicates"], "bootstrap.replicates");
    if (b["level"]) boot.level = yaml_as<double>(b["level"], "bootstrap.level");
    if (b["stratify_by_race"]) boot.stratify_by_race = yaml_as<bool>(b["stratify_by_race"], "bootstrap.stratify_by_race");
    boot.validate();
    c.bootstrap = boot;
  }
  if (const auto t = root["truncation_percentile"]; t && !t.IsNull())
    c.truncation_percentile = yaml_as<double>(t, "truncation_percentile");
  if (root["positivity"]) {
    const auto mode = yaml_as<std::string>(root["positivity"], "positivity");
    if (mode != "warn" && mode != "strict")
      throw ValidationError("'positivity' must be warn or strict, not '" + mode + "'");
    c.strict_positivity = mode == "strict";
  }
  if (const auto mc = root["montecarlo"]; mc && !mc.IsNull()) {
    check_keys(mc, "montecarlo", {"draws", "factorization"});
    if (mc["draws"]) c.draws = yaml_as<std::size_t>(mc["draws"], "montecarlo.draws");
    if (mc["factorization"])
      c.factorization = parse_factorization(yaml_as<std::string>(mc["factorization"], "montecarlo.factorization"));
  }
  if (const auto s = root["simulate"]; s && !s.IsNull()) {
    check_keys(s, "simulate", {"n", "scm"});
    if (s["n"]) c.simulate_n = yaml_as<std::size_t>(s["n"], "simulate.n");
    c.scm = read_scm(s["scm"]);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  try {
    return parse_config(YAML::LoadFile(path));
  } catch (const YAML::BadFile&) {
    throw ValidationError("cannot open configuration '" + path + "'");
  } catch (const YAML::Exception& e) {
    throw ValidationError("configuration '" + path + "': " + e.what());
  }
}

inline RunConfig parse_config(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("configuration: ") + e.what());
  }
}

/// Complete configuration, defaults included; parsing it back gives the
/// same run.
inline std::string to_yaml(const RunConfig& c) {
  using namespace detail;
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "input" << YAML::Value << c.input;
  e << YAML::Key << "output" << YAML::Value << c.output;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "roles" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "race" << YAML::Value << c.roles.race.variable;
  e << YAML::Key << "r0" << YAML::Value << c.roles.race.marginalized;
  e << YAML::Key << "r0prime" << YAML::Value << c.roles.race.privileged;
  e << YAML::Key << "target" << YAML::Value << c.roles.target;
  e << YAML::Key << "outcome" << YAML::Value << c.roles.outcome;
  if (c.roles.selection)
    e << YAML::Key << "selection" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "column"
      << YAML::Value << c.roles.selection->variable << YAML::Key << "level" << YAML::Value
      << c.roles.selection->level << YAML::EndMap;
  e << YAML::EndMap;
  e << YAML::Key << "levels" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, lv] : c.levels) {
    e << YAML::Key << name << YAML::Value;
    emit_strings(e, lv);
  }
  e << YAML::EndMap;
  e << YAML::Key << "categorical" << YAML::Value;
  emit_strings(e, c.categorical);
  if (c.partition) {
    e << YAML::Key << "partition" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "outcome_allowable" << YAML::Value;
    emit_strings(e, c.partition->outcome_allowable);
    e << YAML::Key << "target_allowable" << YAML::Value;
    emit_strings(e, c.partition->target_allowable_extra);
    e << YAML::Key << "non_allowable" << YAML::Value;
    emit_strings(e, c.partition->non_allowable);
    e << YAML::EndMap;
  }
  if (c.preset) e << YAML::Key << "preset" << YAML::Value << *c.preset;
  if (!c.schema.empty()) {
    e << YAML::Key << "schema" << YAML::Value << YAML::BeginMap;
    for (const auto& v : c.schema) e << YAML::Key << v.name << YAML::Value << std::string(to_string(v.tag));
    e << YAML::EndMap;
  }
  e << YAML::Key << "standardization" << YAML::Value << std::string(to_string(c.standardization));
  e << YAML::Key << "backend" << YAML::Value << std::string(to_string(c.backend));
  e << YAML::Key << "models" << YAML::Value << YAML::BeginMap;
  if (c.models.default_family)
    e << YAML::Key << "default_family" << YAML::Value << std::string(to_string(*c.models.default_family));
  for (const auto& [role, o] : c.models.roles) {
    e << YAML::Key << role << YAML::Value << YAML::BeginMap;
    if (o.family) e << YAML::Key << "family" << YAML::Value << std::string(to_string(*o.family));
    if (o.predictors) {
      e << YAML::Key << "predictors" << YAML::Value;
      emit_strings(e, *o.predictors);
    }
    if (!o.interactions.empty()) {
      e << YAML::Key << "interactions" << YAML::Value << YAML::Flow << YAML::BeginSeq;
      for (const auto& t : o.interactions) emit_strings(e, t);
      e << YAML::EndSeq;
    }
    e << YAML::EndMap;
  }
  e << YAML::EndMap;
  if (c.bootstrap)
    e << YAML::Key << "bootstrap" << YAML::Value << YAML::BeginMap << YAML::Key << "replicates" << YAML::Value
      << c.bootstrap->replicates << YAML::Key << "level" << YAML::Value << c.bootstrap->level << YAML::Key
      << "stratify_by_race" << YAML::Value << c.bootstrap->stratify_by_race << YAML::EndMap;
  if (c.truncation_percentile) e << YAML::Key << "truncation_percentile" << YAML::Value << *c.truncation_percentile;
  e << YAML::Key << "positivity" << YAML::Value << (c.strict_positivity ? "strict" : "warn");
  e << YAML::Key << "montecarlo" << YAML::Value << YAML::BeginMap << YAML::Key << "draws" << YAML::Value << c.draws
    << YAML::Key << "factorization" << YAML::Value << std::string(to_string(c.factorization)) << YAML::EndMap;
  const auto& s = c.scm;
  e << YAML::Key << "simulate" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "n" << YAML::Value << c.simulate_n;
  e << YAML::Key << "scm" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "r0_label" << YAML::Value << s.r0_label << YAML::Key << "r1_label" << YAML::Value << s.r1_label;
  e << YAML::Key << "p_r0" << YAML::Value << s.p_r0;
  emit_coefficients(e, "age", s.age);
  emit_coefficients(e, "sex", s.sex);
  emit_coefficients(e, "edu", s.edu);
  emit_coefficients(e, "ins", s.ins);
  emit_coefficients(e, "dia", s.dia);
  emit_coefficients(e, "l1", s.l1);
  emit_coefficients(e, "m", s.m);
  emit_coefficients(e, "l2", s.l2);
  for (const auto& [k, v] : {std::pair<const char*, double>{"sigma_u", s.sigma_u}, {"sigma_l1", s.sigma_l1},
                             {"m_stage", s.m_stage}, {"m_race_edu", s.m_race_edu}, {"m_race_ins", s.m_race_ins},
                             {"l2_l1", s.l2_l1}, {"l2_m", s.l2_m}, {"sigma_l2", s.sigma_l2},
                             {"threshold", s.threshold}, {"stage_cut", s.stage_cut}})
    e << YAML::Key << k << YAML::Value << v;
  e << YAML::Key << "select" << YAML::Value << s.select;
  e << YAML::EndMap << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Exit codes

enum ExitCode : int { kExitOk = 0, kExitGeneric = 1, kExitValidation = 2, kExitPositivity = 3, kExitModel = 4 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const SchemaError*>(&e)) return kExitValidation;
  if (dynamic_cast<const PositivityError*>(&e)) return kExitPositivity;
  if (dynamic_cast<const NonConvergenceError*>(&e) || dynamic_cast<const DegenerateResponseError*>(&e) ||
      dynamic_cast<const BootstrapError*>(&e))
    return kExitModel;
  return kExitGeneric;
}

// ---------------------------------------------------------------------------
// Pipeline

struct Ingested {
  CohortTable table;
  RoleBindings roles;  // selection already applied
  CsvResult counts;
};

/// Reads the configured input, loading only the columns the run uses.
inline Ingested ingest(const RunConfig& c, const AllowabilityPartition& p) {
  if (c.input.empty()) throw ValidationError("configuration key 'input' is required");
  validate(p, c.roles, [&] {
    std::vector<std::string> names{c.roles.race.variable, c.roles.target, c.roles.outcome};
    for (const auto& x : p.all()) names.push_back(x);
    if (c.roles.selection) names.push_back(c.roles.selection->variable);
    return names;
  }()).throw_if_invalid();
  CsvOptions opt;
  opt.columns = {c.roles.race.variable};
  for (const auto& x : p.all()) opt.columns.push_back(x);
  opt.columns.push_back(c.roles.target);
  opt.columns.push_back(c.roles.outcome);
  for (const auto& [name, lv] : c.levels)
    if (std::find(opt.columns.begin(), opt.columns.end(), name) != opt.columns.end()) opt.levels[name] = lv;
  opt.categorical = {c.roles.race.variable, c.roles.target};
  for (const auto& name : c.categorical) opt.categorical.insert(name);
  opt.selection = c.roles.selection;
  Ingested out;
  out.counts = read_csv(c.input, opt);
  out.table = std::move(out.counts.table);
  out.counts.table = {};
  out.roles = c.roles;
  out.roles.selection.reset();
  return out;
}

namespace detail {

inline nlohmann::json interval_json(const Interval& i) { return {i.lower, i.upper}; }

inline nlohmann::json estimate_json(const DecompositionEstimate& e) {
  nlohmann::json j{{"observed", e.observed},
                   {"reduction", e.reduction},
                   {"residual", e.residual},
                   {"mean_r0", e.mean_r0},
                   {"mean_r0prime", e.mean_r0prime},
                   {"mean_counterfactual", e.mean_cf},
                   {"additivity_gap", e.additivity_gap()},
                   {"standardization", std::string(to_string(e.standardization))},
                   {"backend", std::string(to_string(e.backend))}};
  return j;
}

inline nlohmann::json intervals_json(const DecompositionEstimate& e) {
  if (!e.ci) return nullptr;
  const auto& c = *e.ci;
  return {{"level", c.observed.level},
          {"observed", interval_json(c.observed)},
          {"reduction", interval_json(c.reduction)},
          {"residual", interval_json(c.residual)},
          {"mean_r0", interval_json(c.mean_r0)},
          {"mean_r0prime", interval_json(c.mean_r0prime)},
          {"mean_counterfactual", interval_json(c.mean_cf)}};
}

inline nlohmann::json positivity_json(const PositivityReport& r) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : r.violations)
    v.push_back({{"kind", std::string(to_string(x.kind))},
                 {"stratum", x.stratum},
                 {"target_level", x.target_level},
                 {"message", x.message}});
  return {{"ok", r.ok()}, {"violations", v}, {"notes", r.notes}};
}

inline nlohmann::json models_json(const ModelSet& models) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [role, m] : models) {
    nlohmann::json j{{"model", m.label()}, {"family", std::string(to_string(m.spec.family))}};
    if (m.spec.family == Family::Saturated) {
      j["cells"] = m.table.size();
    } else {
      nlohmann::json coef = nlohmann::json::object();
      const auto& names = m.design.names();
      for (Eigen::Index k = 0; k < m.coefficients.cols(); ++k) {
        std::string prefix;
        if (m.coefficients.cols() > 1 || m.spec.family != Family::Linear) {
          const auto level = m.response_levels[m.modeled_levels[static_cast<std::size_t>(k) + 1]];
          prefix = m.response_name + "=" + level + ": ";
        }
        for (Eigen::Index r = 0; r < m.coefficients.rows(); ++r)
          coef[prefix + names[static_cast<std::size_t>(r)]] = m.coefficients(r, k);
      }
      j["coefficients"] = coef;
      j["converged"] = m.converged;
      j["iterations"] = m.iterations;
      j["ridge"] = m.ridge;
      if (m.spec.family == Family::Linear) j["sigma2"] = m.sigma2;
    }
    j["warnings"] = m.warnings;
    out[role] = j;
  }
  return out;
}

inline nlohmann::json weights_json(const std::vector<WeightVector>& ws) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& w : ws) {
    const auto& d = w.diagnostics;
    nlohmann::json j{{"weight", std::string(to_string(w.formula))},
                     {"count", d.count},
                     {"zeros", d.zeros},
                     {"min", d.min},
                     {"max", d.max},
                     {"mean", d.mean},
                     {"ess", d.ess},
                     {"truncated", d.truncated}};
    j["cap"] = d.cap ? nlohmann::json(*d.cap) : nlohmann::json(nullptr);
    out.push_back(j);
  }
  return out;
}

inline nlohmann::json assumptions_json(const PositivityReport& r) {
  bool b1 = true, b2 = true;
  for (const auto& v : r.violations) {
    if (v.kind == PositivityViolation::Kind::B2 || v.kind == PositivityViolation::Kind::UndefinedIntervention)
      b2 = false;
    else
      b1 = false;
  }
  return nlohmann::json::array(
      {{{"id", "A"}, {"status", "untestable"},
        {"statement", "no unmeasured confounding of the target-outcome relation given race and all covariates"}},
       {{"id", "B1"}, {"status", b1 ? "satisfied in sample" : "violated in sample"},
        {"statement", "r0 takes every target level the intervention assigns within its strata"}},
       {{"id", "B2"}, {"status", b2 ? "satisfied in sample" : "violated in sample"},
        {"statement", "every r0' target-allowable stratum also occurs among r0"}},
       {{"id", "C"}, {"status", "untestable"},
        {"statement", "target and outcome models are correctly specified"}}});
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

struct Report {
  nlohmann::json body;
  std::string summary;
};

inline std::string summarize(const nlohmann::json& b) {
  std::ostringstream out;
  out << "eqdecomp " << b["software"]["version"].get<std::string>() << "  " << b["command"].get<std::string>()
      << "  seed " << b["seed"].get<std::uint64_t>() << "\n";
  if (b.contains("cohort")) {
    const auto& c = b["cohort"];
    out << "cohort: " << c["rows"] << " rows (" << c["r0_rows"] << " r0, " << c["r0prime_rows"] << " r0'), "
        << c["rejected_missing"] << " rejected for missing values, " << c["dropped_by_selection"]
        << " dropped by selection\n";
  }
  if (b.contains("estimate")) {
    const auto& e = b["estimate"];
    out << "backend " << e["backend"].get<std::string>() << ", standardization "
        << e["standardization"].get<std::string>() << "\n";
    const auto& ci = b["intervals"];
    for (const char* k : {"observed", "reduction", "residual"}) {
      out << "  " << k << std::string(10 - std::strlen(k), ' ') << detail::fmt(e[k].get<double>());
      if (!ci.is_null())
        out << "  [" << detail::fmt(ci[k][0].get<double>()) << ", " << detail::fmt(ci[k][1].get<double>()) << "]";
      out << "\n";
    }
    if (!ci.is_null()) out << "  intervals: " << ci["level"].get<double>() * 100 << "% bootstrap percentile\n";
  }
  if (b.contains("weights"))
    for (const auto& w : b["weights"])
      out << "  " << w["weight"].get<std::string>() << ": mean " << detail::fmt(w["mean"].get<double>()) << ", max "
          << detail::fmt(w["max"].get<double>()) << ", ESS " << detail::fmt(w["ess"].get<double>()) << "\n";
  if (b.contains("positivity")) {
    const auto& p = b["positivity"];
    out << "positivity: " << (p["ok"].get<bool>() ? "no violations" : std::to_string(p["violations"].size()) + " violation(s)")
        << "\n";
    for (const auto& v : p["violations"]) out << "  - " << v["message"].get<std::string>() << "\n";
  }
  if (b.contains("assumptions"))
    for (const auto& a : b["assumptions"])
      out << "assumption " << a["id"].get<std::string>() << ": " << a["status"].get<std::string>() << "\n";
  if (b.contains("warnings"))
    for (const auto& w : b["warnings"]) out << "warning: " << w.get<std::string>() << "\n";
  return out.str();
}

inline nlohmann::json report_header(const RunConfig& c, std::string_view command) {
  return {{"software", {{"name", "eqdecomp"}, {"version", std::string(kVersion)}}},
          {"command", std::string(command)},
          {"seed", c.seed},
          {"config", to_yaml(c)}};
}

/// The main pipeline: ingest, fit, estimate, bootstrap, report.
inline Report run_decompose(const RunConfig& c, std::size_t workers = default_workers()) {
  const auto p = c.effective_partition();
  const auto in = ingest(c, p);
  const auto view = prepare_cohort(in.table, in.roles, p);
  auto body = report_header(c, "decompose");
  body["cohort"] = {{"rows_read", in.counts.rows_read},
                    {"rejected_missing", in.counts.rejected_missing},
                    {"dropped_by_selection", in.counts.dropped_by_selection},
                    {"rows", in.table.rows()},
                    {"r0_rows", view.r0_rows.size()},
                    {"r0prime_rows", view.r1_rows.size()}};
  body["partition"] = {{"outcome_allowable", p.outcome_allowable},
                       {"target_allowable", p.target_allowable_extra},
                       {"non_allowable", p.non_allowable}};
  std::optional<BootstrapConfig> boot = c.bootstrap;
  if (boot) {
    boot->seed = c.seed;
    boot->workers = workers;
  }

  DecompositionEstimate estimate;
  PositivityReport positivity;
  std::vector<std::string> warnings;
  std::size_t failures = 0, replicates = 0;
  if (c.backend == Backend::RMPW || c.backend == Backend::IORW) {
    WeightedOptions opt;
    opt.standardization = c.standardization;
    opt.backend = c.backend;
    opt.models = c.models;
    opt.truncation_percentile = c.truncation_percentile;
    opt.strict_positivity = c.strict_positivity;
    const auto run = decompose_weighted(in.table, in.roles, p, opt, boot);
    estimate = run.estimate;
    positivity = run.positivity;
    warnings = run.warnings;
    failures = run.bootstrap_failures;
    replicates = run.bootstrap_replicates;
    body["models"] = detail::models_json(run.models);
    body["weights"] = detail::weights_json(run.weights);
    body["direct_check"] = run.direct_check;
  } else {
    positivity = check_positivity(in.table, in.roles, p, c.standardization);
    if (c.strict_positivity && !positivity.ok()) positivity.raise_first();
    for (const auto& v : positivity.violations) warnings.push_back("positivity: " + v.message);
    std::function<DecompositionEstimate(const CohortTable&)> fn;
    if (c.backend == Backend::MonteCarloG) {
      MonteCarloOptions mc;
      mc.standardization = c.standardization;
      mc.factorization = c.factorization;
      mc.draws = c.draws;
      mc.seed = c.seed;
      mc.workers = workers;
      const auto models = fit_models(Backend::MonteCarloG, in.roles, p, view.data, c.models, c.factorization);
      for (const auto& [role, m] : models)
        for (const auto& w : m.warnings) warnings.push_back(role + ": " + w);
      body["models"] = detail::models_json(models);
      estimate = decompose_montecarlo(models, view.data, in.roles, p, mc);
      mc.workers = 1;  // replicates already run in parallel
      fn = [&, mc](const CohortTable& t) { return decompose_montecarlo(t, in.roles, p, c.models, mc); };
    } else {
      std::vector<std::string> names{in.roles.race.variable};
      for (const auto& x : p.all()) names.push_back(x);
      names.push_back(in.roles.target);
      names.push_back(in.roles.outcome);
      auto exact = [&, names](const CohortTable& t) {
        const auto j = empirical_joint(t, names);
        if (!j) throw ValidationError("the exact backend needs every used column to be categorical");
        return decompose_exact(*j, in.roles, p, c.standardization);
      };
      estimate = exact(view.data);
      fn = exact;
    }
    if (boot) {
      const auto r = bootstrap_ci(fn, view.data, *boot, boot->stratify_by_race ? std::optional(in.roles.race.variable) : std::nullopt);
      estimate.ci = r.intervals;
      failures = r.failures;
      replicates = r.replicates;
      for (const auto& m : r.failure_messages) warnings.push_back("bootstrap " + m);
    }
  }
  body["estimate"] = detail::estimate_json(estimate);
  body["intervals"] = detail::intervals_json(estimate);
  body["bootstrap"] = boot ? nlohmann::json{{"replicates", replicates}, {"failures", failures},
                                            {"stratified_by_race", boot->stratify_by_race}}
                           : nlohmann::json(nullptr);
  body["positivity"] = detail::positivity_json(positivity);
  body["assumptions"] = detail::assumptions_json(positivity);
  body["warnings"] = warnings;
  return {body, summarize(body)};
}

/// Support diagnostics only.
inline Report run_check(const RunConfig& c) {
  const auto p = c.effective_partition();
  const auto in = ingest(c, p);
  const auto view = prepare_cohort(in.table, in.roles, p);
  auto body = report_header(c, "check");
  body["cohort"] = {{"rows_read", in.counts.rows_read},
                    {"rejected_missing", in.counts.rejected_missing},
                    {"dropped_by_selection", in.counts.dropped_by_selection},
                    {"rows", in.table.rows()},
                    {"r0_rows", view.r0_rows.size()},
                    {"r0prime_rows", view.r1_rows.size()}};
  const auto r = check_positivity(in.table, in.roles, p, c.standardization);
  body["positivity"] = detail::positivity_json(r);
  body["assumptions"] = detail::assumptions_json(r);
  return {body, summarize(body)};
}

/// Draws a cohort from the generator and returns it with a summary.
inline CohortTable run_simulate(const RunConfig& c, std::size_t workers = default_workers()) {
  ScmConfig scm = c.scm;
  scm.seed = c.seed;
  return generate(scm, c.simulate_n, workers);
}

/// Writes <prefix>.json and <prefix>.txt. The JSON carries a generation
/// timestamp; everything else is a function of the configuration.
inline void write_report(const Report& r, const std::string& prefix) {
  auto body = r.body;
  body["generated_at"] = detail::utc_timestamp();
  std::ofstream json(prefix + ".json");
  if (!json) throw ValidationError("cannot write report '" + prefix + ".json'");
  json << body.dump(2) << "\n";
  std::ofstream txt(prefix + ".txt");
  if (!txt) throw ValidationError("cannot write report '" + prefix + ".txt'");
  txt << r.summary;
}

}  // namespace eqdecomp
