#pragma once

// Decomposition estimands and their exact evaluation on a FiniteJoint:
// observed disparity, counterfactual mean under the stochastic intervention
// that gives r0 the target law of r0' within target-allowable strata, and
// the reduction/residual contrasts built from them.

#include <optional>
#include <string>
#include <vector>

#include "dist_core.hpp"
#include "partition.hpp"

namespace eqdecomp {

enum class Backend { ExactOracle, MonteCarloG, RMPW, IORW };

inline std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::ExactOracle: return "exact";
    case Backend::MonteCarloG: return "montecarlo";
    case Backend::RMPW: return "rmpw";
    case Backend::IORW: return "iorw";
  }
  return "?";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "exact") return Backend::ExactOracle;
  if (s == "montecarlo" || s == "gformula") return Backend::MonteCarloG;
  if (s == "rmpw") return Backend::RMPW;
  if (s == "iorw") return Backend::IORW;
  throw ValidationError("unknown backend '" + std::string(s) + "'");
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

struct DecompositionEstimate {
  double mean_r0 = 0.0;
  double mean_r0prime = 0.0;
  double mean_cf = 0.0;
  double observed = 0.0;
  double reduction = 0.0;
  double residual = 0.0;
  Standardization standardization = Standardization::Pooled;
  Backend backend = Backend::ExactOracle;

  struct Intervals {
    Interval mean_r0, mean_r0prime, mean_cf, observed, reduction, residual;
  };
  std::optional<Intervals> ci;

  static DecompositionEstimate from_means(double r0, double r0prime, double cf, Standardization s,
                                          Backend b) {
    DecompositionEstimate e;
    e.mean_r0 = r0;
    e.mean_r0prime = r0prime;
    e.mean_cf = cf;
    e.observed = r0 - r0prime;
    e.reduction = r0 - cf;
    e.residual = cf - r0prime;
    e.standardization = s;
    e.backend = b;
    return e;
  }

  // reduction + residual - observed; zero up to rounding for every backend.
  double additivity_gap() const { return reduction + residual - observed; }
};

enum class Group { R0, R0Prime };

// How the r0' standardized mean is factorized: through A^m and A^y only
// (default), or additionally through N (the alternate form).
enum class Factorization { Standard, Alternate };

/// A joint restricted to the cohort and laid out canonically as
/// [race, A^y..., A^m..., N..., target, outcome].
struct ExactModel {
  explicit ExactModel(FiniteJoint j) : joint(std::move(j)) {}

  FiniteJoint joint;
  std::size_t r0 = 0;
  std::size_t r1 = 0;
  std::vector<std::size_t> ay, am, n;
  std::size_t m = 0;
  std::size_t y = 0;
  std::vector<double> y_values;
  double p_r0 = 0.0;
  double p_r1 = 0.0;

  std::string describe(const Assignment& full, std::span<const std::size_t> positions) const {
    std::string out;
    for (auto p : positions) {
      if (!out.empty()) out += ", ";
      out += joint.variables()[p].name + "=" + joint.variables()[p].levels[full[p]];
    }
    return out.empty() ? "(all)" : out;
  }
};

inline std::vector<std::size_t> concat(std::initializer_list<std::span<const std::size_t>> parts) {
  std::vector<std::size_t> out;
  for (auto part : parts) out.insert(out.end(), part.begin(), part.end());
  return out;
}

inline FiniteJoint apply_selection(const FiniteJoint& joint, const RoleBindings& roles) {
  if (!roles.selection) return joint;
  try {
    return condition(joint, {{roles.selection->variable, roles.selection->level}});
  } catch (const UndefinedConditionalError&) {
    throw ValidationError("selection " + roles.selection->variable + "=" + roles.selection->level +
                          " leaves an empty cohort");
  }
}

inline std::vector<std::string> names_of(const FiniteJoint& joint) {
  std::vector<std::string> out;
  for (const auto& v : joint.variables()) out.push_back(v.name);
  return out;
}

inline ExactModel prepare_exact(const FiniteJoint& source, const RoleBindings& roles,
                                const AllowabilityPartition& partition) {
  validate(partition, roles, names_of(source)).throw_if_invalid();
  const FiniteJoint cohort = apply_selection(source, roles);

  std::vector<std::string> layout{roles.race.variable};
  for (const auto& v : partition.outcome_allowable) layout.push_back(v);
  for (const auto& v : partition.target_allowable_extra) layout.push_back(v);
  for (const auto& v : partition.non_allowable) layout.push_back(v);
  layout.push_back(roles.target);
  layout.push_back(roles.outcome);

  ExactModel out{project(cohort, layout)};
  const auto& race = out.joint.variables()[0];
  out.r0 = out.joint.level_index(0, roles.race.marginalized);
  out.r1 = out.joint.level_index(0, roles.race.privileged);
  const Marginal race_mass(out.joint, {0});
  Assignment probe(out.joint.dimension(), 0);
  double other = 0.0;
  for (std::size_t l = 0; l < race.cardinality(); ++l) {
    probe[0] = l;
    if (l == out.r0)
      out.p_r0 = race_mass.at(probe);
    else if (l == out.r1)
      out.p_r1 = race_mass.at(probe);
    else
      other += race_mass.at(probe);
  }
  if (!(out.p_r0 > 0.0) || !(out.p_r1 > 0.0) || other > 0.0)
    throw ValidationError("race variable '" + race.name + "' is not binary in the cohort");

  std::size_t pos = 1;
  for (std::size_t i = 0; i < partition.outcome_allowable.size(); ++i) out.ay.push_back(pos++);
  for (std::size_t i = 0; i < partition.target_allowable_extra.size(); ++i) out.am.push_back(pos++);
  for (std::size_t i = 0; i < partition.non_allowable.size(); ++i) out.n.push_back(pos++);
  out.m = pos++;
  out.y = pos;
  const auto& outcome = out.joint.variables()[out.y];
  for (std::size_t l = 0; l < outcome.cardinality(); ++l)
    out.y_values.push_back(level_value(outcome, l));
  return out;
}

struct PositivityViolation {
  enum class Kind {
    StandardSupport,        // a standard stratum lacks one race group
    B1,                     // r0 never takes a target level the intervention demands
    B2,                     // r0' stratum or target level absent among r0
    UndefinedIntervention,  // r0 stratum with no r0' mass to define the target law
  };
  Kind kind;
  std::string stratum;
  std::string target_level;
  std::string message;
};

inline std::string_view to_string(PositivityViolation::Kind k) {
  using K = PositivityViolation::Kind;
  switch (k) {
    case K::StandardSupport: return "standard-support";
    case K::B1: return "B1-positivity";
    case K::B2: return "B2-common-support";
    case K::UndefinedIntervention: return "undefined-intervention";
  }
  return "?";
}

struct PositivityReport {
  std::vector<PositivityViolation> violations;
  std::vector<std::string> notes;

  bool ok() const noexcept { return violations.empty(); }

  [[noreturn]] void raise_first() const {
    const auto& v = violations.front();
    using K = PositivityViolation::Kind;
    if (v.kind == K::B2 || v.kind == K::UndefinedIntervention) throw CommonSupportError(v.message);
    throw PositivityError(v.message);
  }
};

namespace detail {

struct OutcomeValue {
  const ExactModel* model;
  double operator()(const Assignment& a) const { return model->y_values[a[model->y]]; }
};

// Mass and first-moment tables needed by every exact formula.
struct ExactTables {
  const ExactModel& model;
  std::vector<std::size_t> r_ay, r_am_ay, r_n_am_ay, r_m_am_ay, r_m_n_am_ay, ay_only;
  Marginal ay, r_ay_mass, r_am_ay_mass, r_n_am_ay_mass, r_m_am_ay_mass, r_m_n_am_ay_mass;
  Marginal y_r_ay, y_r_m_am_ay, y_r_m_n_am_ay;

  static std::vector<std::size_t> race_plus(std::initializer_list<std::span<const std::size_t>> parts) {
    std::vector<std::size_t> out{0};
    for (auto part : parts) out.insert(out.end(), part.begin(), part.end());
    return out;
  }

  explicit ExactTables(const ExactModel& m)
      : model(m),
        r_ay(race_plus({m.ay})),
        r_am_ay(race_plus({m.am, m.ay})),
        r_n_am_ay(race_plus({m.n, m.am, m.ay})),
        r_m_am_ay(race_plus({std::span<const std::size_t>(&m.m, 1), m.am, m.ay})),
        r_m_n_am_ay(race_plus({std::span<const std::size_t>(&m.m, 1), m.n, m.am, m.ay})),
        ay_only(m.ay),
        ay(m.joint, ay_only),
        r_ay_mass(m.joint, r_ay),
        r_am_ay_mass(m.joint, r_am_ay),
        r_n_am_ay_mass(m.joint, r_n_am_ay),
        r_m_am_ay_mass(m.joint, r_m_am_ay),
        r_m_n_am_ay_mass(m.joint, r_m_n_am_ay),
        y_r_ay(m.joint, r_ay, OutcomeValue{&m}),
        y_r_m_am_ay(m.joint, r_m_am_ay, OutcomeValue{&m}),
        y_r_m_n_am_ay(m.joint, r_m_n_am_ay, OutcomeValue{&m}) {}

  // Standard mass S(a^y) for the assignment's A^y values.
  double standard(Assignment& full, Standardization s) const {
    switch (s) {
      case Standardization::Pooled: return ay.at(full);
      case Standardization::MarginalizedToR0: {
        full[0] = model.r0;
        return r_ay_mass.at(full) / model.p_r0;
      }
      case Standardization::MarginalizedToR0Prime: {
        full[0] = model.r1;
        return r_ay_mass.at(full) / model.p_r1;
      }
    }
    return 0.0;
  }
};

inline std::span<const std::size_t> one(const std::size_t& p) { return {&p, 1}; }

}  // namespace detail

/// Support diagnostics honoring the partial form of positivity: only target
/// levels with positive probability under the r0' law of a target-allowable
/// stratum are demanded of r0. Strata with zero standard mass are skipped.
inline PositivityReport check_positivity(const ExactModel& model,
                                         Standardization s = Standardization::Pooled) {
  using K = PositivityViolation::Kind;
  PositivityReport report;
  const detail::ExactTables t(model);
  const auto& vars = model.joint.variables();
  Assignment full(model.joint.dimension(), 0);
  const auto target_name = vars[model.m].name;

  for_each_assignment(model.joint, model.ay, full, [&](const Assignment&) {
    if (!(t.standard(full, s) > 0.0)) return;
    const std::string ay_desc = model.describe(full, model.ay);
    full[0] = model.r0;
    const double r0_ay = t.r_ay_mass.at(full);
    full[0] = model.r1;
    const double r1_ay = t.r_ay_mass.at(full);
    if (!(r0_ay > 0.0) || !(r1_ay > 0.0)) {
      report.violations.push_back(
          {K::StandardSupport, ay_desc, "",
           "outcome-allowable stratum {" + ay_desc + "} has positive " +
               std::string(to_string(s)) + " standard mass but no " +
               (r0_ay > 0.0 ? "r0'" : "r0") + " members"});
      return;
    }
    for_each_assignment(model.joint, model.am, full, [&](const Assignment&) {
      const auto stratum_positions = concat({model.am, model.ay});
      const std::string stratum = model.describe(full, stratum_positions);
      full[0] = model.r0;
      const double r0_mass = t.r_am_ay_mass.at(full);
      full[0] = model.r1;
      const double r1_mass = t.r_am_ay_mass.at(full);
      if (r1_mass > 0.0 && !(r0_mass > 0.0)) {
        report.violations.push_back({K::B2, stratum, "",
                                     "common support fails: stratum {" + stratum +
                                         "} occurs among r0' but not among r0"});
        return;
      }
      if (r0_mass > 0.0 && !(r1_mass > 0.0)) {
        report.violations.push_back({K::UndefinedIntervention, stratum, "",
                                     "target law of r0' is undefined in stratum {" + stratum +
                                         "}: no r0' members"});
        return;
      }
      if (!(r0_mass > 0.0)) return;
      for (std::size_t lm = 0; lm < vars[model.m].cardinality(); ++lm) {
        full[model.m] = lm;
        full[0] = model.r1;
        if (!(t.r_m_am_ay_mass.at(full) > 0.0)) continue;
        const std::string level = vars[model.m].levels[lm];
        full[0] = model.r0;
        if (!(t.r_m_am_ay_mass.at(full) > 0.0)) {
          report.violations.push_back({K::B2, stratum, level,
                                       "common support fails: " + target_name + "=" + level +
                                           " occurs among r0' but never among r0 in stratum {" +
                                           stratum + "}"});
          continue;
        }
        for_each_assignment(model.joint, model.n, full, [&](const Assignment&) {
          full[0] = model.r0;
          if (!(t.r_n_am_ay_mass.at(full) > 0.0)) return;
          if (t.r_m_n_am_ay_mass.at(full) > 0.0) return;
          const auto all_positions = concat({model.n, model.am, model.ay});
          const std::string where = model.describe(full, all_positions);
          report.violations.push_back({K::B1, where, level,
                                       "positivity fails: r0 never has " + target_name + "=" +
                                           level + " in stratum {" + where +
                                           "} although r0' does given {" + stratum + "}"});
        });
      }
      full[model.m] = 0;
    });
  });
  return report;
}

inline PositivityReport check_positivity(const FiniteJoint& joint, const RoleBindings& roles,
                                         const AllowabilityPartition& partition,
                                         Standardization s = Standardization::Pooled) {
  return check_positivity(prepare_exact(joint, roles, partition), s);
}

/// Standardized outcome mean of one race group, either directly as
/// sum_ay E[Y|g,ay] S(ay) or through a target factorization.
inline double standardized_mean_exact(const ExactModel& model, Group g, Standardization s,
                                      std::optional<Factorization> via = std::nullopt) {
  const detail::ExactTables t(model);
  const std::size_t race = g == Group::R0 ? model.r0 : model.r1;
  Assignment full(model.joint.dimension(), 0);
  double total = 0.0;
  for_each_assignment(model.joint, model.ay, full, [&](const Assignment&) {
    const double weight = t.standard(full, s);
    if (!(weight > 0.0)) return;
    full[0] = race;
    const double group_ay = t.r_ay_mass.at(full);
    if (!(group_ay > 0.0))
      throw PositivityError("outcome-allowable stratum {" + model.describe(full, model.ay) +
                            "} has positive " + std::string(to_string(s)) +
                            " standard mass but no members of the " +
                            (g == Group::R0 ? "r0" : "r0'") + " group");
    if (!via) {
      total += weight * t.y_r_ay.at(full) / group_ay;
      return;
    }
    double stratum_mean = 0.0;
    for_each_assignment(model.joint, model.am, full, [&](const Assignment&) {
      const double am_mass = t.r_am_ay_mass.at(full);
      if (!(am_mass > 0.0)) return;
      const double p_am = am_mass / group_ay;
      if (*via == Factorization::Standard) {
        for (std::size_t lm = 0; lm < model.joint.variables()[model.m].cardinality(); ++lm) {
          full[model.m] = lm;
          const double cell = t.r_m_am_ay_mass.at(full);
          if (!(cell > 0.0)) continue;
          stratum_mean += p_am * (cell / am_mass) * (t.y_r_m_am_ay.at(full) / cell);
        }
        full[model.m] = 0;
      } else {
        for_each_assignment(model.joint, model.n, full, [&](const Assignment&) {
          const double n_mass = t.r_n_am_ay_mass.at(full);
          if (!(n_mass > 0.0)) return;
          for (std::size_t lm = 0; lm < model.joint.variables()[model.m].cardinality(); ++lm) {
            full[model.m] = lm;
            const double cell = t.r_m_n_am_ay_mass.at(full);
            if (!(cell > 0.0)) continue;
            stratum_mean += p_am * (n_mass / am_mass) * (cell / n_mass) *
                            (t.y_r_m_n_am_ay.at(full) / cell);
          }
          full[model.m] = 0;
        });
      }
    });
    total += weight * stratum_mean;
  });
  return total;
}

inline double observed_disparity_exact(const FiniteJoint& joint, const RoleBindings& roles,
                                       const AllowabilityPartition& partition, Standardization s) {
  const auto model = prepare_exact(joint, roles, partition);
  return standardized_mean_exact(model, Group::R0, s) -
         standardized_mean_exact(model, Group::R0Prime, s);
}

/// sum over (m, n, a^m, a^y) of E[Y|r0,m,n,a^m,a^y] P(m|r0',a^m,a^y)
/// P(n|r0,a^m,a^y) P(a^m|r0,a^y) S(a^y).
inline double counterfactual_mean_exact(const ExactModel& model, Standardization s) {
  const auto report = check_positivity(model, s);
  if (!report.ok()) report.raise_first();

  const detail::ExactTables t(model);
  const std::size_t levels_m = model.joint.variables()[model.m].cardinality();
  Assignment full(model.joint.dimension(), 0);
  double total = 0.0;
  for_each_assignment(model.joint, model.ay, full, [&](const Assignment&) {
    const double weight = t.standard(full, s);
    if (!(weight > 0.0)) return;
    full[0] = model.r0;
    const double r0_ay = t.r_ay_mass.at(full);
    for_each_assignment(model.joint, model.am, full, [&](const Assignment&) {
      full[0] = model.r0;
      const double r0_am_ay = t.r_am_ay_mass.at(full);
      if (!(r0_am_ay > 0.0)) return;
      full[0] = model.r1;
      const double r1_am_ay = t.r_am_ay_mass.at(full);
      std::vector<double> law(levels_m);
      for (std::size_t lm = 0; lm < levels_m; ++lm) {
        full[model.m] = lm;
        law[lm] = t.r_m_am_ay_mass.at(full) / r1_am_ay;
      }
      full[model.m] = 0;
      full[0] = model.r0;
      const double p_am = r0_am_ay / r0_ay;
      for_each_assignment(model.joint, model.n, full, [&](const Assignment&) {
        const double r0_n = t.r_n_am_ay_mass.at(full);
        if (!(r0_n > 0.0)) return;
        const double p_n = r0_n / r0_am_ay;
        for (std::size_t lm = 0; lm < levels_m; ++lm) {
          if (!(law[lm] > 0.0)) continue;
          full[model.m] = lm;
          const double cell = t.r_m_n_am_ay_mass.at(full);
          total += weight * p_am * p_n * law[lm] * (t.y_r_m_n_am_ay.at(full) / cell);
        }
        full[model.m] = 0;
      });
    });
  });
  return total;
}

inline double counterfactual_mean_exact(const FiniteJoint& joint, const RoleBindings& roles,
                                        const AllowabilityPartition& partition,
                                        Standardization s) {
  return counterfactual_mean_exact(prepare_exact(joint, roles, partition), s);
}

inline DecompositionEstimate decompose_exact(const ExactModel& model, Standardization s,
                                             Factorization f = Factorization::Standard) {
  const double cf = counterfactual_mean_exact(model, s);
  const double r0 = standardized_mean_exact(model, Group::R0, s);
  const double r1 = standardized_mean_exact(model, Group::R0Prime, s, f);
  return DecompositionEstimate::from_means(r0, r1, cf, s, Backend::ExactOracle);
}

inline DecompositionEstimate decompose_exact(const FiniteJoint& joint, const RoleBindings& roles,
                                             const AllowabilityPartition& partition,
                                             Standardization s = Standardization::Pooled,
                                             Factorization f = Factorization::Standard) {
  return decompose_exact(prepare_exact(joint, roles, partition), s, f);
}

/// The cohort joint of the r0 group after the stochastic intervention: the
/// target's conditional law given (A^m, A^y) is replaced by the r0' law and
/// every other factor is kept, so within (A^m, A^y) strata the target is
/// independent of N. Returned in the canonical layout with all mass on r0.
inline FiniteJoint intervene_target(const ExactModel& model) {
  using K = PositivityViolation::Kind;
  const auto report = check_positivity(model, Standardization::Pooled);
  for (const auto& v : report.violations)
    if (v.kind == K::B2 || v.kind == K::UndefinedIntervention) throw CommonSupportError(v.message);
  for (const auto& v : report.violations)
    if (v.kind == K::B1) throw PositivityError(v.message);

  const auto& J = model.joint;
  const Marginal r_am_ay(J, concat({std::vector<std::size_t>{0}, model.am, model.ay}));
  const Marginal r_m_am_ay(J, concat({std::vector<std::size_t>{0, model.m}, model.am, model.ay}));
  const Marginal r_rest(J, concat({std::vector<std::size_t>{0, model.m}, model.n, model.am, model.ay}));
  const Marginal r_n_am_ay(J, concat({std::vector<std::size_t>{0}, model.n, model.am, model.ay}));
  const Marginal race(J, {0});

  std::vector<double> cells(J.size(), 0.0);
  J.for_each_cell([&](const Assignment& a, double p) {
    (void)p;
    if (a[0] != model.r0) return;
    Assignment q = a;
    // P(a^y, a^m, n | r0)
    const double covariates = r_n_am_ay.at(q) / model.p_r0;
    if (!(covariates > 0.0)) return;
    q[0] = model.r1;
    const double r1_stratum = r_am_ay.at(q);
    if (!(r1_stratum > 0.0))
      throw CommonSupportError("target law of r0' is undefined in stratum {" +
                               model.describe(a, concat({model.am, model.ay})) + "}");
    const double law = r_m_am_ay.at(q) / r1_stratum;
    if (!(law > 0.0)) return;
    q[0] = model.r0;
    // P(y | r0, m, n, a^m, a^y)
    const double y_given = J.probability(a) / r_rest.at(q);
    cells[J.cell_index(a)] = covariates * law * y_given;
  });
  const double sum = std::accumulate(cells.begin(), cells.end(), 0.0);
  for (double& c : cells) c /= sum;
  return FiniteJoint(J.variables(), std::move(cells));
}

inline FiniteJoint intervene_target(const FiniteJoint& joint, const RoleBindings& roles,
                                    const AllowabilityPartition& partition) {
  return intervene_target(prepare_exact(joint, roles, partition));
}

/// E[Y] over the intervened joint reweighted from P(a^y|r0) to the standard.
/// An independent route to counterfactual_mean_exact.
inline double counterfactual_mean_via_intervention(const ExactModel& model, Standardization s) {
  const FiniteJoint intervened = intervene_target(model);
  const Marginal ay_intervened(intervened, model.ay);
  const detail::ExactTables t(model);
  return expectation(intervened, [&](const Assignment& a) {
    Assignment q = a;
    const double target_weight = t.standard(q, s);
    const double own = ay_intervened.at(a);
    return model.y_values[a[model.y]] * target_weight / own;
  });
}

}  // namespace eqdecomp
