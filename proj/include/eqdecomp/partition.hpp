#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace eqdecomp {

struct RaceBinding {
  std::string variable;
  std::string marginalized;  // r0
  std::string privileged;    // r0'
};

// Cohort filter, e.g. baseline hypertension Y1 = 1.
struct SelectionBinding {
  std::string variable;
  std::string level;
};

struct RoleBindings {
  RaceBinding race;
  std::string target;
  std::string outcome;
  std::optional<SelectionBinding> selection;

  std::vector<std::string> role_variables() const {
    std::vector<std::string> out{race.variable, target, outcome};
    if (selection) out.push_back(selection->variable);
    return out;
  }

  // Same bindings with the two race levels swapped.
  RoleBindings swapped() const {
    RoleBindings out = *this;
    std::swap(out.race.marginalized, out.race.privileged);
    return out;
  }
};

// A^y (outcome- and target-allowable), A^m (target-allowable only), N
// (non-allowable confounders). Any set may be empty.
struct AllowabilityPartition {
  std::vector<std::string> outcome_allowable;
  std::vector<std::string> target_allowable_extra;
  std::vector<std::string> non_allowable;

  std::vector<std::string> all() const {
    std::vector<std::string> out = outcome_allowable;
    out.insert(out.end(), target_allowable_extra.begin(), target_allowable_extra.end());
    out.insert(out.end(), non_allowable.begin(), non_allowable.end());
    return out;
  }

  // A^m followed by A^y: the conditioning set of the intervention.
  std::vector<std::string> target_allowable() const {
    std::vector<std::string> out = target_allowable_extra;
    out.insert(out.end(), outcome_allowable.begin(), outcome_allowable.end());
    return out;
  }

  bool operator==(const AllowabilityPartition&) const = default;
};

enum class Standardization { Pooled, MarginalizedToR0, MarginalizedToR0Prime };

inline constexpr Standardization kAllStandardizations[] = {
    Standardization::Pooled, Standardization::MarginalizedToR0,
    Standardization::MarginalizedToR0Prime};

inline std::string_view to_string(Standardization s) {
  switch (s) {
    case Standardization::Pooled: return "pooled";
    case Standardization::MarginalizedToR0: return "r0";
    case Standardization::MarginalizedToR0Prime: return "r0prime";
  }
  return "?";
}

inline Standardization parse_standardization(std::string_view s) {
  if (s == "pooled") return Standardization::Pooled;
  if (s == "r0" || s == "marginalized") return Standardization::MarginalizedToR0;
  if (s == "r0prime" || s == "privileged") return Standardization::MarginalizedToR0Prime;
  throw ValidationError("unknown standardization '" + std::string(s) +
                        "' (expected pooled, r0 or r0prime)");
}

struct Violation {
  enum class Kind { Overlap, UnknownVariable, RoleCollision, DuplicateRole };
  Kind kind;
  std::string variable;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  // Covariates present in the schema but in no set; ignored by estimation.
  std::vector<std::string> ignored;

  bool ok() const noexcept { return violations.empty(); }

  std::string summary() const {
    std::string out;
    for (const auto& v : violations) {
      if (!out.empty()) out += "; ";
      out += v.message;
    }
    return out;
  }

  void throw_if_invalid() const {
    if (!ok()) throw ValidationError(summary());
  }
};

inline ValidationReport validate(const AllowabilityPartition& partition, const RoleBindings& roles,
                                 std::span<const std::string> schema) {
  ValidationReport report;
  const std::set<std::string> known(schema.begin(), schema.end());
  using Kind = Violation::Kind;

  const auto roles_list = roles.role_variables();
  std::set<std::string> role_set;
  for (const auto& r : roles_list) {
    if (r.empty()) {
      report.violations.push_back({Kind::UnknownVariable, r, "a role is bound to an empty name"});
      continue;
    }
    if (!role_set.insert(r).second)
      report.violations.push_back(
          {Kind::DuplicateRole, r, "variable '" + r + "' is bound to more than one role"});
    if (!known.contains(r))
      report.violations.push_back({Kind::UnknownVariable, r, "role variable '" + r + "' is unknown"});
  }
  if (roles.race.marginalized == roles.race.privileged)
    report.violations.push_back({Kind::DuplicateRole, roles.race.variable,
                                 "race levels r0 and r0' must differ"});

  const std::pair<const std::vector<std::string>*, const char*> sets[] = {
      {&partition.outcome_allowable, "outcome-allowable"},
      {&partition.target_allowable_extra, "target-allowable"},
      {&partition.non_allowable, "non-allowable"}};
  std::map<std::string, std::string> owner;
  for (const auto& [set, label] : sets) {
    for (const auto& name : *set) {
      if (!known.contains(name))
        report.violations.push_back(
            {Kind::UnknownVariable, name, std::string(label) + " variable '" + name + "' is unknown"});
      if (role_set.contains(name))
        report.violations.push_back({Kind::RoleCollision, name,
                                     "variable '" + name + "' is a role variable and cannot be " +
                                         label});
      auto [it, inserted] = owner.emplace(name, label);
      if (!inserted)
        report.violations.push_back({Kind::Overlap, name,
                                     "variable '" + name + "' appears in both " + it->second +
                                         " and " + label + " sets"});
    }
  }
  for (const auto& name : schema)
    if (!owner.contains(name) && !role_set.contains(name)) report.ignored.push_back(name);
  return report;
}

enum class CovariateTag { Demographic, Clinical, Socioeconomic };

inline CovariateTag parse_tag(std::string_view s) {
  if (s == "demographic") return CovariateTag::Demographic;
  if (s == "clinical") return CovariateTag::Clinical;
  if (s == "socioeconomic") return CovariateTag::Socioeconomic;
  throw ValidationError("unknown covariate tag '" + std::string(s) + "'");
}

struct TaggedVariable {
  std::string name;
  CovariateTag tag;
};

// Preset allowability designations, numbered 1-6.
enum class Preset {
  ObLinear = 1,       // everything non-allowable
  ObReweighting = 2,  // everything target-allowable only
  NieAnalogue = 3,    // everything outcome-allowable
  PseOneTwo = 4,      // demographics A^y, rest N
  PseThree = 5,       // demographics A^y, rest A^m
  Meaningful = 6,     // demographics A^y, clinical A^m, socioeconomic N
};

inline Preset parse_preset(std::string_view s) {
  static const std::pair<std::string_view, Preset> names[] = {
      {"1", Preset::ObLinear},    {"ob-linear", Preset::ObLinear},
      {"2", Preset::ObReweighting}, {"ob-reweighting", Preset::ObReweighting},
      {"3", Preset::NieAnalogue}, {"nie", Preset::NieAnalogue},
      {"4", Preset::PseOneTwo},   {"pse-1-2", Preset::PseOneTwo},
      {"5", Preset::PseThree},    {"pse-3", Preset::PseThree},
      {"6", Preset::Meaningful},  {"meaningful", Preset::Meaningful}};
  for (const auto& [name, p] : names)
    if (name == s) return p;
  throw ValidationError("unknown preset '" + std::string(s) + "' (expected 1-6)");
}

inline AllowabilityPartition preset(Preset id, std::span<const TaggedVariable> schema) {
  AllowabilityPartition out;
  for (const auto& v : schema) {
    const bool demographic = v.tag == CovariateTag::Demographic;
    switch (id) {
      case Preset::ObLinear: out.non_allowable.push_back(v.name); break;
      case Preset::ObReweighting: out.target_allowable_extra.push_back(v.name); break;
      case Preset::NieAnalogue: out.outcome_allowable.push_back(v.name); break;
      case Preset::PseOneTwo:
        (demographic ? out.outcome_allowable : out.non_allowable).push_back(v.name);
        break;
      case Preset::PseThree:
        (demographic ? out.outcome_allowable : out.target_allowable_extra).push_back(v.name);
        break;
      case Preset::Meaningful:
        if (demographic)
          out.outcome_allowable.push_back(v.name);
        else if (v.tag == CovariateTag::Clinical)
          out.target_allowable_extra.push_back(v.name);
        else
          out.non_allowable.push_back(v.name);
        break;
      default: throw ValidationError("unknown preset id " + std::to_string(static_cast<int>(id)));
    }
  }
  return out;
}

inline AllowabilityPartition preset(int id, std::span<const TaggedVariable> schema) {
  if (id < 1 || id > 6) throw ValidationError("unknown preset id " + std::to_string(id));
  return preset(static_cast<Preset>(id), schema);
}

// The covariates of the motivating example with their tags.
inline std::vector<TaggedVariable> motivating_schema() {
  return {{"age", CovariateTag::Demographic},   {"sex", CovariateTag::Demographic},
          {"edu", CovariateTag::Socioeconomic}, {"ins", CovariateTag::Socioeconomic},
          {"dia", CovariateTag::Clinical},      {"L1", CovariateTag::Clinical}};
}

}  // namespace eqdecomp
