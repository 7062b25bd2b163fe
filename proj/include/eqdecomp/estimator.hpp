#pragma once

// Sample-level decomposition: nuisance fits, weight construction, stacked
// weighted contrasts, and the percentile bootstrap.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cohort.hpp"
#include "gformula.hpp"
#include "nuisance.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "weights.hpp"

namespace eqdecomp {

/// Weighted mean of Y in group a minus weighted mean in group b.
inline double weighted_mean_contrast(std::span<const double> ya, std::span<const double> wa,
                                     std::span<const double> yb, std::span<const double> wb) {
  auto mean = [](std::span<const double> y, std::span<const double> w, const char* label) {
    if (y.empty()) throw ValidationError(std::string("contrast group ") + label + " is empty");
    if (y.size() != w.size()) throw ValidationError("weight count differs from outcome count");
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!(w[i] >= 0.0) || !std::isfinite(w[i]))
        throw ValidationError(std::string("negative or non-finite weight in contrast group ") + label);
      sw += w[i];
      swy += w[i] * y[i];
    }
    if (!(sw > 0.0)) throw ValidationError(std::string("contrast group ") + label + " has no weight");
    return swy / sw;
  };
  return mean(ya, wa, "a") - mean(yb, wb, "b");
}

/// r0 rows (weight w_r0), r0' rows (weight w_r0'), and a copy of the r0 rows
/// carrying the counterfactual weight. Every contrast is the slope of a
/// weighted regression of Y on the indicator of one origin, fit on the rows
/// of two origins.
struct StackedDataset {
  enum class Origin { R0, R0Prime, R0Copy };

  std::vector<double> y;
  std::vector<double> weight;
  std::vector<Origin> origin;
  std::vector<std::size_t> source_row;

  static StackedDataset build(const CohortTable& data, const std::string& outcome,
                              const WeightVector& w_r0, const WeightVector& w_r0prime,
                              const WeightVector& w_cf) {
    StackedDataset s;
    const auto& ycol = data.column(outcome);
    auto add = [&](const WeightVector& w, Origin o) {
      for (std::size_t k = 0; k < w.rows.size(); ++k) {
        const auto r = w.rows[k];
        s.y.push_back(ycol.number(r));
        s.weight.push_back(data.case_weight(r) * w.values[k]);
        s.origin.push_back(o);
        s.source_row.push_back(r);
      }
    };
    add(w_r0, Origin::R0);
    add(w_r0prime, Origin::R0Prime);
    add(w_cf, Origin::R0Copy);
    return s;
  }

  // Coefficients (b0, b1) of Y ~ b0 + b1 * 1{origin == a} over origins {a, b}.
  std::array<double, 2> regression(Origin a, Origin b) const {
    double sw = 0.0, swx = 0.0, swy = 0.0, swxy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (origin[i] != a && origin[i] != b) continue;
      const double x = origin[i] == a ? 1.0 : 0.0;
      sw += weight[i];
      swx += weight[i] * x;
      swy += weight[i] * y[i];
      swxy += weight[i] * x * y[i];
    }
    // Normal equations [sw swx; swx swx] (b0, b1) = (swy, swxy).
    const double det = sw * swx - swx * swx;
    if (!(swx > 0.0) || !(det > 0.0)) throw ValidationError("stacked contrast has an empty group");
    const double b0 = (swx * swy - swx * swxy) / det;
    const double b1 = (sw * swxy - swx * swy) / det;
    return {b0, b1};
  }

  double contrast(Origin a, Origin b) const { return regression(a, b)[1]; }

  double mean(Origin o) const {
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (origin[i] == o) {
        sw += weight[i];
        swy += weight[i] * y[i];
      }
    if (!(sw > 0.0)) throw ValidationError("stacked group has no weight");
    return swy / sw;
  }
};

// ---------------------------------------------------------------------------
// Nuisance model configuration

struct ModelOverride {
  std::optional<Family> family;
  std::optional<std::vector<std::string>> predictors;
  std::vector<std::vector<std::string>> interactions;
};

struct ModelConfig {
  std::optional<Family> default_family;
  std::map<std::string, ModelOverride> roles;
};

inline const std::vector<std::string>& model_roles(Backend b) {
  static const std::vector<std::string> rmpw{"race_ay", "target_r0", "target_r0prime"};
  static const std::vector<std::string> iorw{"race_ay",    "race_m_a",   "race_m_n_a", "race_a",
                                             "race_n_a",   "target_a",   "target_n_a"};
  static const std::vector<std::string> mc{"race_ay",   "target_r0",        "target_r0prime",
                                           "outcome_r0", "outcome_r0prime"};
  static const std::vector<std::string> none;
  switch (b) {
    case Backend::RMPW: return rmpw;
    case Backend::IORW: return iorw;
    case Backend::MonteCarloG: return mc;
    case Backend::ExactOracle: return none;
  }
  return none;
}

inline const std::vector<std::string>& all_model_roles() {
  static const std::vector<std::string> all{
      "race_ay",         "target_r0",           "target_r0prime",       "target_r0prime_full",
      "outcome_r0",      "outcome_r0prime",     "outcome_r0prime_full", "race_m_a",
      "race_m_n_a",      "race_a",              "race_n_a",             "target_a",
      "target_n_a"};
  return all;
}

/// Default specification of a named nuisance model, with user overrides.
inline ModelSpec role_spec(const std::string& role, const RoleBindings& roles,
                           const AllowabilityPartition& p, const CohortTable& data,
                           const ModelConfig& config) {
  const auto& ay = p.outcome_allowable;
  const auto& am = p.target_allowable_extra;
  const auto& n = p.non_allowable;
  auto join = [](std::initializer_list<const std::vector<std::string>*> parts) {
    std::vector<std::string> out;
    for (auto* part : parts) out.insert(out.end(), part->begin(), part->end());
    return out;
  };
  const std::vector<std::string> m{roles.target};
  const FitGroup r0{roles.race.variable, roles.race.marginalized};
  const FitGroup r1{roles.race.variable, roles.race.privileged};

  ModelSpec s;
  if (role == "race_ay") s = {roles.race.variable, join({&ay}), {}, Family::BinaryLogit, std::nullopt};
  else if (role == "target_r0") s = {roles.target, join({&n, &am, &ay}), {}, Family::BinaryLogit, r0};
  else if (role == "target_r0prime") s = {roles.target, join({&am, &ay}), {}, Family::BinaryLogit, r1};
  else if (role == "target_r0prime_full") s = {roles.target, join({&n, &am, &ay}), {}, Family::BinaryLogit, r1};
  else if (role == "outcome_r0") s = {roles.outcome, join({&m, &n, &am, &ay}), {}, Family::BinaryLogit, r0};
  else if (role == "outcome_r0prime") s = {roles.outcome, join({&m, &am, &ay}), {}, Family::BinaryLogit, r1};
  else if (role == "outcome_r0prime_full") s = {roles.outcome, join({&m, &n, &am, &ay}), {}, Family::BinaryLogit, r1};
  else if (role == "race_m_a") s = {roles.race.variable, join({&m, &am, &ay}), {}, Family::BinaryLogit, std::nullopt};
  else if (role == "race_m_n_a") s = {roles.race.variable, join({&m, &n, &am, &ay}), {}, Family::BinaryLogit, std::nullopt};
  else if (role == "race_a") s = {roles.race.variable, join({&am, &ay}), {}, Family::BinaryLogit, std::nullopt};
  else if (role == "race_n_a") s = {roles.race.variable, join({&n, &am, &ay}), {}, Family::BinaryLogit, std::nullopt};
  else if (role == "target_a") s = {roles.target, join({&am, &ay}), {}, Family::BinaryLogit, std::nullopt};
  else if (role == "target_n_a") s = {roles.target, join({&n, &am, &ay}), {}, Family::BinaryLogit, std::nullopt};
  else throw ValidationError("unknown model role '" + role + "'");

  std::optional<Family> family = config.default_family;
  if (auto it = config.roles.find(role); it != config.roles.end()) {
    if (it->second.family) family = it->second.family;
    if (it->second.predictors) s.predictors = *it->second.predictors;
    s.interactions = it->second.interactions;
  }
  const auto& response = data.column(s.response);
  if (!family) {
    bool categorical = true;
    for (const auto& x : s.predictors) categorical = categorical && data.column(x).categorical();
    if (!response.categorical()) family = Family::Linear;
    else family = categorical && s.interactions.empty() ? Family::Saturated : Family::BinaryLogit;
  }
  if (*family == Family::BinaryLogit && response.categorical() && response.levels.size() > 2)
    family = Family::MultinomialLogit;
  if (*family == Family::Saturated) s.interactions.clear();
  s.family = *family;
  return s;
}

using ModelSet = std::map<std::string, FittedModel>;

inline ModelSet fit_models(Backend backend, const RoleBindings& roles, const AllowabilityPartition& p,
                           const CohortTable& data, const ModelConfig& config,
                           std::optional<Factorization> factorization = std::nullopt) {
  ModelSet models;
  auto wanted = model_roles(backend);
  if (backend == Backend::MonteCarloG && factorization == Factorization::Alternate) {
    wanted.push_back("target_r0prime_full");
    wanted.push_back("outcome_r0prime_full");
  }
  for (const auto& role : wanted) {
    // Without non-allowables the N-conditioned IORW models coincide with
    // their allowable-only counterparts.
    if (backend == Backend::IORW && p.non_allowable.empty() && !config.roles.contains(role)) {
      if (role == "race_m_n_a" && models.contains("race_m_a")) {
        models.emplace(role, models.at("race_m_a"));
        continue;
      }
      if (role == "race_n_a" && models.contains("race_a")) {
        models.emplace(role, models.at("race_a"));
        continue;
      }
      if (role == "target_n_a" && models.contains("target_a")) {
        models.emplace(role, models.at("target_a"));
        continue;
      }
    }
    models.emplace(role, fit(role_spec(role, roles, p, data, config), data));
  }
  return models;
}

// ---------------------------------------------------------------------------
// Cohort preparation

struct CohortView {
  CohortTable data;  // cohort rows only
  std::vector<std::size_t> r0_rows;
  std::vector<std::size_t> r1_rows;
  std::uint32_t r0_code = 0;
  std::uint32_t r1_code = 0;
  double p_r0 = 0.0;
  std::size_t dropped_by_selection = 0;
};

inline CohortView prepare_cohort(const CohortTable& data, const RoleBindings& roles,
                                 const AllowabilityPartition& p) {
  std::vector<std::string> names;
  for (const auto& c : data.columns()) names.push_back(c.name);
  validate(p, roles, names).throw_if_invalid();
  CohortView v;
  std::vector<std::size_t> keep;
  if (roles.selection) {
    keep = data.rows_where(roles.selection->variable, roles.selection->level);
    v.dropped_by_selection = data.rows() - keep.size();
    v.data = data.subset(keep);
  } else {
    v.data = data;
  }
  const auto& race = v.data.column(roles.race.variable);
  if (!race.categorical()) throw ValidationError("race column '" + race.name + "' is not categorical");
  v.r0_code = race.code_of(roles.race.marginalized);
  v.r1_code = race.code_of(roles.race.privileged);
  double w0 = 0.0, w1 = 0.0;
  for (std::size_t i = 0; i < v.data.rows(); ++i) {
    const double c = v.data.case_weight(i);
    if (!(c > 0.0)) continue;
    if (race.codes[i] == v.r0_code) {
      v.r0_rows.push_back(i);
      w0 += c;
    } else if (race.codes[i] == v.r1_code) {
      v.r1_rows.push_back(i);
      w1 += c;
    } else {
      throw ValidationError("race column '" + race.name + "' is not binary in the cohort (level '" +
                            race.levels[race.codes[i]] + "')");
    }
  }
  if (!(w0 > 0.0) || !(w1 > 0.0))
    throw ValidationError("race column '" + race.name + "' is not binary in the cohort");
  v.p_r0 = w0 / (w0 + w1);
  return v;
}

inline RowDescriber row_describer(const CohortTable& data, const RoleBindings& roles,
                                  const AllowabilityPartition& p) {
  std::vector<std::string> names{roles.race.variable};
  for (const auto& x : p.all()) names.push_back(x);
  names.push_back(roles.target);
  return [&data, names](std::size_t row) {
    std::string out = "row " + std::to_string(row + 1) + " {";
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto& c = data.column(names[k]);
      out += (k ? ", " : "") + names[k] + "=" +
             (c.categorical() ? c.levels[c.codes[row]] : std::to_string(c.values[row]));
    }
    return out + "}";
  };
}

/// Empirical joint of the cohort over race, covariates, target and outcome,
/// when all are categorical; used for support diagnostics on data.
inline std::optional<FiniteJoint> empirical_joint(const CohortTable& data,
                                                  const std::vector<std::string>& names) {
  std::vector<VariableSpec> vars;
  std::vector<const Column*> cols;
  std::size_t cells = 1;
  for (const auto& n : names) {
    const auto& c = data.column(n);
    if (!c.categorical()) return std::nullopt;
    vars.push_back({c.name, c.levels});
    cols.push_back(&c);
    cells *= c.levels.size();
    if (cells > 50'000'000) return std::nullopt;
  }
  std::vector<double> mass(cells, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    std::size_t idx = 0;
    for (std::size_t k = 0; k < cols.size(); ++k) idx = idx * vars[k].cardinality() + cols[k]->codes[i];
    mass[idx] += data.case_weight(i);
    total += data.case_weight(i);
  }
  if (!(total > 0.0)) return std::nullopt;
  for (auto& m : mass) m /= total;
  const double sum = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (auto& m : mass) m /= sum;
  return FiniteJoint(std::move(vars), std::move(mass));
}

namespace detail {

inline PositivityReport cohort_positivity(const CohortView& view, const RoleBindings& roles,
                                          const AllowabilityPartition& p, Standardization s) {
  std::vector<std::string> names{roles.race.variable};
  for (const auto& x : p.all()) names.push_back(x);
  names.push_back(roles.target);
  auto joint = empirical_joint(view.data, names);
  if (!joint) {
    PositivityReport r;
    r.notes.push_back("support check skipped: a covariate or the target is numeric");
    return r;
  }
  // A constant dummy outcome lets the exact layout apply; the outcome only
  // needs to be present, not categorical.
  std::vector<VariableSpec> vars = joint->variables();
  vars.push_back({"__outcome", {"0", "1"}});
  std::vector<double> cells;
  for (double c : joint->cells()) {
    cells.push_back(c);
    cells.push_back(0.0);
  }
  RoleBindings r = roles;
  r.outcome = "__outcome";
  r.selection.reset();
  auto report = check_positivity(FiniteJoint(std::move(vars), std::move(cells)), r, p, s);
  report.notes.push_back("support evaluated on observed frequencies");
  return report;
}

}  // namespace detail

inline PositivityReport check_positivity(const CohortTable& data, const RoleBindings& roles,
                                         const AllowabilityPartition& p,
                                         Standardization s = Standardization::Pooled) {
  return detail::cohort_positivity(prepare_cohort(data, roles, p), roles, p, s);
}

// ---------------------------------------------------------------------------
// Weighted decomposition

inline WeightInputs fitted_weight_inputs(Backend backend, const ModelSet& models,
                                         const CohortView& view, const RoleBindings& roles) {
  const auto& data = view.data;
  const std::size_t n = data.rows();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  WeightInputs in;
  in.p_r0 = view.p_r0;
  const CohortTable r0_table = data.subset(view.r0_rows);
  const auto& m_codes = data.column(roles.target).codes;
  const auto r0c = view.r0_code, r1c = view.r1_code;

  auto spread = [&](std::vector<double>& out, const Eigen::MatrixXd& P, auto column_of) {
    out.assign(n, nan);
    for (std::size_t k = 0; k < view.r0_rows.size(); ++k) {
      const auto r = view.r0_rows[k];
      out[r] = P(static_cast<Eigen::Index>(k), column_of(r));
    }
  };
  auto target_column = [&](std::size_t r) { return static_cast<Eigen::Index>(m_codes[r]); };
  auto race_column = [](std::uint32_t code) {
    return [code](std::size_t) { return static_cast<Eigen::Index>(code); };
  };

  {
    const Eigen::MatrixXd P = predict_proba(models.at("race_ay"), data);
    in.r0_given_ay.resize(n);
    for (std::size_t i = 0; i < n; ++i) in.r0_given_ay[i] = P(static_cast<Eigen::Index>(i), r0c);
  }
  if (backend == Backend::RMPW) {
    spread(in.m_given_r1_a, predict_proba(models.at("target_r0prime"), r0_table), target_column);
    spread(in.m_given_r0_na, predict_proba(models.at("target_r0"), r0_table), target_column);
  } else if (backend == Backend::IORW) {
    spread(in.r1_given_m_a, predict_proba(models.at("race_m_a"), r0_table), race_column(r1c));
    spread(in.r0_given_m_na, predict_proba(models.at("race_m_n_a"), r0_table), race_column(r0c));
    spread(in.r1_given_a, predict_proba(models.at("race_a"), r0_table), race_column(r1c));
    spread(in.r0_given_na, predict_proba(models.at("race_n_a"), r0_table), race_column(r0c));
    spread(in.m_given_a, predict_proba(models.at("target_a"), r0_table), target_column);
    spread(in.m_given_na, predict_proba(models.at("target_n_a"), r0_table), target_column);
  }
  return in;
}

struct WeightedRun {
  DecompositionEstimate estimate;
  ModelSet models;
  std::vector<WeightVector> weights;  // w_r0, w_r0', counterfactual
  double direct_check = 0.0;          // |stacked - direct| over the three contrasts
  PositivityReport positivity;
  std::vector<std::string> warnings;
  std::size_t cohort_rows = 0;
  std::size_t dropped_by_selection = 0;
  std::size_t bootstrap_failures = 0;
  std::size_t bootstrap_replicates = 0;
};

struct WeightedOptions {
  Standardization standardization = Standardization::Pooled;
  Backend backend = Backend::RMPW;
  ModelConfig models;
  std::optional<double> truncation_percentile;
  // Abort on any support violation found in the data; otherwise violations
  // are reported and only undefined weights abort.
  bool strict_positivity = false;
};

inline WeightedRun estimate_weighted(const CohortTable& data, const RoleBindings& roles,
                                     const AllowabilityPartition& p, const WeightedOptions& opt) {
  if (opt.backend != Backend::RMPW && opt.backend != Backend::IORW)
    throw ValidationError("weighted estimation needs the rmpw or iorw backend");
  const auto view = prepare_cohort(data, roles, p);
  WeightedRun run;
  run.cohort_rows = view.data.rows();
  run.dropped_by_selection = view.dropped_by_selection;
  run.positivity = detail::cohort_positivity(view, roles, p, opt.standardization);
  if (!run.positivity.ok()) {
    if (opt.strict_positivity) run.positivity.raise_first();
    for (const auto& v : run.positivity.violations) run.warnings.push_back("positivity: " + v.message);
  }
  run.models = fit_models(opt.backend, roles, p, view.data, opt.models);
  for (const auto& [name, m] : run.models)
    for (const auto& w : m.warnings) run.warnings.push_back(name + ": " + w);

  const auto in = fitted_weight_inputs(opt.backend, run.models, view, roles);
  const auto describe = row_describer(view.data, roles, p);
  const auto cw = view.data.case_weights();
  auto w_r0 = group_standardization_weight(in, view.r0_rows, Group::R0, opt.standardization, cw, describe);
  auto w_r1 = group_standardization_weight(in, view.r1_rows, Group::R0Prime, opt.standardization, cw, describe);
  auto w_cf = opt.backend == Backend::RMPW
                  ? rmpw_weight(in, view.r0_rows, opt.standardization, cw, describe)
                  : iorw_weight(in, view.r0_rows, opt.standardization, cw, describe);
  if (opt.truncation_percentile) {
    truncate_weights(w_r0, *opt.truncation_percentile, cw);
    truncate_weights(w_r1, *opt.truncation_percentile, cw);
    truncate_weights(w_cf, *opt.truncation_percentile, cw);
  }

  using O = StackedDataset::Origin;
  const auto stacked = StackedDataset::build(view.data, roles.outcome, w_r0, w_r1, w_cf);
  const double observed = stacked.contrast(O::R0, O::R0Prime);
  const double reduction = stacked.contrast(O::R0, O::R0Copy);
  const double residual = stacked.contrast(O::R0Copy, O::R0Prime);
  const double m1 = stacked.mean(O::R0Prime);
  // Means are recovered from the contrasts so the additivity identity holds
  // for the reported values.
  run.estimate = DecompositionEstimate::from_means(m1 + observed, m1, m1 + residual,
                                                   opt.standardization, opt.backend);
  run.estimate.observed = observed;
  run.estimate.reduction = reduction;
  run.estimate.residual = residual;

  auto direct = [&](const WeightVector& a, const WeightVector& b) {
    std::vector<double> ya, wa, yb, wb;
    const auto& y = view.data.column(roles.outcome);
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
      ya.push_back(y.number(a.rows[k]));
      wa.push_back(cw[a.rows[k]] * a.values[k]);
    }
    for (std::size_t k = 0; k < b.rows.size(); ++k) {
      yb.push_back(y.number(b.rows[k]));
      wb.push_back(cw[b.rows[k]] * b.values[k]);
    }
    return weighted_mean_contrast(ya, wa, yb, wb);
  };
  run.direct_check = std::max({std::abs(direct(w_r0, w_r1) - observed),
                               std::abs(direct(w_r0, w_cf) - reduction),
                               std::abs(direct(w_cf, w_r1) - residual)});
  if (run.direct_check > 1e-9)
    run.warnings.push_back("stacked and direct contrasts differ by " + std::to_string(run.direct_check));
  run.weights = {std::move(w_r0), std::move(w_r1), std::move(w_cf)};
  return run;
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapConfig {
  std::size_t replicates = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  bool stratify_by_race = true;
  std::size_t workers = default_workers();

  void validate() const {
    if (replicates < 1) throw ValidationError("bootstrap replicates must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("bootstrap level must lie in (0, 1)");
  }
};

struct BootstrapResult {
  DecompositionEstimate::Intervals intervals;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<std::array<double, 6>> draws;  // successful replicates, in replicate order
};

inline constexpr std::uint64_t kBootstrapDomain = 0xb0075;

/// Resampling multiplicities for replicate b: within each stratum, as many
/// uniform draws with replacement as the stratum has rows.
inline std::vector<double> bootstrap_multiplicities(std::span<const std::uint32_t> strata,
                                                    std::size_t n_strata, std::uint64_t seed,
                                                    std::uint64_t b) {
  std::vector<std::vector<std::size_t>> members(n_strata);
  for (std::size_t i = 0; i < strata.size(); ++i) members[strata[i]].push_back(i);
  Rng rng(seed, b, kBootstrapDomain);
  std::vector<double> counts(strata.size(), 0.0);
  for (const auto& group : members)
    for (std::size_t k = 0; k < group.size(); ++k) counts[group[rng.below(group.size())]] += 1.0;
  return counts;
}

/// Percentile intervals over full re-estimation on resampled data. `estimate`
/// maps a (reweighted) cohort table to an estimate; replicate b depends only
/// on (seed, b), so the result is independent of the worker count.
template <typename EstimateFn>
BootstrapResult bootstrap_ci(EstimateFn&& estimate, const CohortTable& data, const BootstrapConfig& cfg,
                             const std::optional<std::string>& strata_column = std::nullopt) {
  cfg.validate();
  std::vector<std::uint32_t> strata(data.rows(), 0);
  std::size_t n_strata = 1;
  if (cfg.stratify_by_race && strata_column) {
    const auto& c = data.column(*strata_column);
    strata.assign(c.codes.begin(), c.codes.end());
    n_strata = c.levels.size();
  }
  std::vector<std::optional<std::array<double, 6>>> slots(cfg.replicates);
  std::vector<std::string> errors(cfg.replicates);
  parallel_for(cfg.replicates, cfg.workers, [&](std::size_t b) {
    const auto counts = bootstrap_multiplicities(strata, n_strata, cfg.seed, b);
    try {
      const DecompositionEstimate e = estimate(data.reweighted(counts));
      slots[b] = std::array<double, 6>{e.mean_r0, e.mean_r0prime, e.mean_cf,
                                       e.observed, e.reduction, e.residual};
    } catch (const Error& err) {
      errors[b] = err.what();
    }
  });
  BootstrapResult out;
  out.replicates = cfg.replicates;
  for (std::size_t b = 0; b < cfg.replicates; ++b) {
    if (slots[b]) {
      out.draws.push_back(*slots[b]);
    } else {
      ++out.failures;
      if (out.failure_messages.size() < 5)
        out.failure_messages.push_back("replicate " + std::to_string(b) + ": " + errors[b]);
    }
  }
  if (static_cast<double>(out.failures) > 0.01 * static_cast<double>(cfg.replicates))
    throw BootstrapError(std::to_string(out.failures) + " of " + std::to_string(cfg.replicates) +
                         " bootstrap replicates failed (more than 1%); first: " +
                         out.failure_messages.front());
  const double lo = (1.0 - cfg.level) / 2.0, hi = 1.0 - lo;
  Interval* targets[6] = {&out.intervals.mean_r0,  &out.intervals.mean_r0prime,
                          &out.intervals.mean_cf,  &out.intervals.observed,
                          &out.intervals.reduction, &out.intervals.residual};
  for (int q = 0; q < 6; ++q) {
    std::vector<double> v;
    for (const auto& d : out.draws) v.push_back(d[q]);
    *targets[q] = {quantile(v, lo), quantile(v, hi), cfg.level};
  }
  return out;
}

inline WeightedRun decompose_weighted(const CohortTable& data, const RoleBindings& roles,
                                      const AllowabilityPartition& p, const WeightedOptions& opt,
                                      const std::optional<BootstrapConfig>& boot = std::nullopt) {
  auto run = estimate_weighted(data, roles, p, opt);
  if (boot) {
    const auto view = prepare_cohort(data, roles, p);
    RoleBindings cohort_roles = roles;
    cohort_roles.selection.reset();
    const auto result = bootstrap_ci(
        [&](const CohortTable& replicate) {
          return estimate_weighted(replicate, cohort_roles, p, opt).estimate;
        },
        view.data, *boot, roles.race.variable);
    run.estimate.ci = result.intervals;
    run.bootstrap_failures = result.failures;
    run.bootstrap_replicates = result.replicates;
    for (const auto& m : result.failure_messages) run.warnings.push_back("bootstrap " + m);
  }
  return run;
}

}  // namespace eqdecomp
