#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace eqdecomp {

// Mass tolerance for joint tables and every dist_core output.
inline constexpr double kMassTolerance = 1e-12;

struct VariableSpec {
  std::string name;
  std::vector<std::string> levels;

  std::size_t cardinality() const noexcept { return levels.size(); }

  std::optional<std::size_t> find_level(std::string_view label) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == label) return i;
    return std::nullopt;
  }
};

// Level index per variable, in the joint's variable order.
using Assignment = std::vector<std::size_t>;

// Partial assignment by name: (variable, level label).
using Evidence = std::vector<std::pair<std::string, std::string>>;

inline void validate_variable(const VariableSpec& v) {
  if (v.name.empty()) throw SchemaError("variable with empty name");
  if (v.levels.size() < 2)
    throw SchemaError("variable '" + v.name + "' needs at least two levels");
  std::unordered_set<std::string> seen;
  for (const auto& l : v.levels)
    if (!seen.insert(l).second)
      throw SchemaError("variable '" + v.name + "' repeats level '" + l + "'");
}

/// Exact probability table over finite discrete variables.
///
/// Cells are stored row-major over the variables' level indices: the first
/// variable is the most significant digit, so iterating cell indices visits
/// assignments in lexicographic order. Construction enforces nonnegative
/// cells and total mass within kMassTolerance of one.
class FiniteJoint {
 public:
  FiniteJoint(std::vector<VariableSpec> variables, std::vector<double> cells)
      : variables_(std::move(variables)), cells_(std::move(cells)) {
    std::unordered_set<std::string> names;
    std::size_t total = 1;
    for (const auto& v : variables_) {
      validate_variable(v);
      if (!names.insert(v.name).second)
        throw SchemaError("duplicate variable '" + v.name + "'");
      total *= v.cardinality();
    }
    if (cells_.size() != total)
      throw SchemaError("joint has " + std::to_string(cells_.size()) + " cells, expected " +
                        std::to_string(total));
    double mass = 0.0;
    for (double p : cells_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw SchemaError("joint cell is negative or not finite");
      mass += p;
    }
    if (std::abs(mass - 1.0) > kMassTolerance)
      throw SchemaError("joint mass " + std::to_string(mass) + " differs from 1");
    strides_.assign(variables_.size(), 1);
    for (std::size_t i = variables_.size(); i-- > 1;)
      strides_[i - 1] = strides_[i] * variables_[i].cardinality();
  }

  // Builds a joint from an unnormalized nonnegative weight per assignment.
  template <typename Fn>
  static FiniteJoint from_weights(std::vector<VariableSpec> variables, Fn&& weight) {
    std::size_t total = 1;
    for (const auto& v : variables) total *= v.cardinality();
    std::vector<double> cells(total);
    Assignment a(variables.size(), 0);
    double sum = 0.0;
    for (std::size_t c = 0; c < total; ++c) {
      cells[c] = weight(static_cast<const Assignment&>(a));
      sum += cells[c];
      for (std::size_t k = variables.size(); k-- > 0;) {
        if (++a[k] < variables[k].cardinality()) break;
        a[k] = 0;
      }
    }
    if (!(sum > 0.0)) throw SchemaError("joint weights sum to zero");
    for (double& p : cells) p /= sum;
    return FiniteJoint(std::move(variables), std::move(cells));
  }

  const std::vector<VariableSpec>& variables() const noexcept { return variables_; }
  std::size_t dimension() const noexcept { return variables_.size(); }
  std::size_t size() const noexcept { return cells_.size(); }
  std::span<const double> cells() const noexcept { return cells_; }
  const std::vector<std::size_t>& strides() const noexcept { return strides_; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < variables_.size(); ++i)
      if (variables_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw SchemaError("unknown variable '" + std::string(name) + "'");
  }

  std::size_t level_index(std::size_t var, std::string_view label) const {
    if (auto l = variables_[var].find_level(label)) return *l;
    throw SchemaError("variable '" + variables_[var].name + "' has no level '" + std::string(label) +
                      "'");
  }

  Assignment assignment(std::size_t cell) const {
    Assignment a(variables_.size());
    for (std::size_t k = 0; k < variables_.size(); ++k) {
      a[k] = cell / strides_[k];
      cell %= strides_[k];
    }
    return a;
  }

  std::size_t cell_index(const Assignment& a) const {
    std::size_t c = 0;
    for (std::size_t k = 0; k < variables_.size(); ++k) c += a[k] * strides_[k];
    return c;
  }

  double probability(const Assignment& a) const { return cells_[cell_index(a)]; }

  double mass() const { return std::accumulate(cells_.begin(), cells_.end(), 0.0); }

  // Calls fn(assignment, probability) for every cell in lexicographic order.
  template <typename Fn>
  void for_each_cell(Fn&& fn) const {
    Assignment a(variables_.size(), 0);
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      fn(static_cast<const Assignment&>(a), cells_[c]);
      for (std::size_t k = variables_.size(); k-- > 0;) {
        if (++a[k] < variables_[k].cardinality()) break;
        a[k] = 0;
      }
    }
  }

 private:
  std::vector<VariableSpec> variables_;
  std::vector<double> cells_;
  std::vector<std::size_t> strides_;
};

/// Mass table over a subset of a joint's variables, queried with full
/// assignments of the parent joint. The workhorse behind every P(.|.) term.
class Marginal {
 public:
  Marginal(const FiniteJoint& joint, std::vector<std::size_t> positions)
      : Marginal(joint, std::move(positions), [](const Assignment&) { return 1.0; }) {}

  // Accumulates p * f(assignment) instead of p: a first-moment table.
  template <typename Fn>
  Marginal(const FiniteJoint& joint, std::vector<std::size_t> positions, Fn&& f)
      : positions_(std::move(positions)) {
    std::size_t total = 1;
    strides_.assign(positions_.size(), 1);
    for (std::size_t i = positions_.size(); i-- > 0;) {
      strides_[i] = total;
      total *= joint.variables()[positions_[i]].cardinality();
    }
    mass_.assign(total, 0.0);
    joint.for_each_cell([&](const Assignment& a, double p) {
      if (p != 0.0) mass_[index(a)] += p * f(a);
    });
  }

  double at(const Assignment& full) const { return mass_[index(full)]; }
  std::span<const double> masses() const noexcept { return mass_; }
  const std::vector<std::size_t>& positions() const noexcept { return positions_; }

  std::size_t index(const Assignment& full) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < positions_.size(); ++i) c += full[positions_[i]] * strides_[i];
    return c;
  }

 private:
  std::vector<std::size_t> positions_;
  std::vector<std::size_t> strides_;
  std::vector<double> mass_;
};

// Iterates all assignments of the variables at `positions`, writing them into
// `full` (other entries untouched) and calling fn(full).
template <typename Fn>
void for_each_assignment(const FiniteJoint& joint, std::span<const std::size_t> positions,
                         Assignment& full, Fn&& fn) {
  for (auto p : positions) full[p] = 0;
  for (;;) {
    fn(static_cast<const Assignment&>(full));
    std::size_t k = positions.size();
    for (;;) {
      if (k == 0) return;
      --k;
      const std::size_t p = positions[k];
      if (++full[p] < joint.variables()[p].cardinality()) break;
      full[p] = 0;
    }
  }
}

inline std::vector<std::size_t> positions_of(const FiniteJoint& joint,
                                             std::span<const std::string> names) {
  std::vector<std::size_t> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(joint.index_of(n));
  return out;
}

/// Joint over `keep` in the order given (marginalizing the rest). Used both
/// to marginalize and to permute variables into a canonical layout.
inline FiniteJoint project(const FiniteJoint& joint, std::span<const std::string> keep) {
  const auto positions = positions_of(joint, keep);
  std::unordered_set<std::size_t> distinct(positions.begin(), positions.end());
  if (distinct.size() != positions.size()) throw SchemaError("repeated variable in projection");
  std::vector<VariableSpec> vars;
  for (auto p : positions) vars.push_back(joint.variables()[p]);
  Marginal m(joint, positions);
  return FiniteJoint(std::move(vars), std::vector<double>(m.masses().begin(), m.masses().end()));
}

// Keeps `keep` in the joint's own variable order.
inline FiniteJoint marginalize(const FiniteJoint& joint, std::span<const std::string> keep) {
  std::vector<std::size_t> positions = positions_of(joint, keep);
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  std::vector<std::string> ordered;
  for (auto p : positions) ordered.push_back(joint.variables()[p].name);
  return project(joint, ordered);
}

inline FiniteJoint marginalize(const FiniteJoint& joint, std::initializer_list<std::string> keep) {
  return marginalize(joint, std::span<const std::string>(keep.begin(), keep.size()));
}

inline std::string describe(const Evidence& evidence) {
  std::string out;
  for (const auto& [name, level] : evidence) {
    if (!out.empty()) out += ", ";
    out += name + "=" + level;
  }
  return out.empty() ? "(empty)" : out;
}

/// Distribution of the remaining variables given `evidence`, renormalized.
inline FiniteJoint condition(const FiniteJoint& joint, const Evidence& evidence) {
  std::vector<std::pair<std::size_t, std::size_t>> fixed;
  for (const auto& [name, level] : evidence) {
    const auto var = joint.index_of(name);
    fixed.emplace_back(var, joint.level_index(var, level));
  }
  double evidence_mass = 0.0;
  joint.for_each_cell([&](const Assignment& a, double p) {
    for (const auto& [v, l] : fixed)
      if (a[v] != l) return;
    evidence_mass += p;
  });
  if (!(evidence_mass > 0.0))
    throw UndefinedConditionalError("conditioning on zero-probability evidence " +
                                    describe(evidence));
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < joint.dimension(); ++i) {
    const bool is_fixed = std::any_of(fixed.begin(), fixed.end(),
                                      [&](const auto& f) { return f.first == i; });
    if (!is_fixed) rest.push_back(joint.variables()[i].name);
  }
  if (rest.empty()) throw SchemaError("evidence fixes every variable");
  const auto positions = positions_of(joint, rest);
  std::vector<VariableSpec> vars;
  for (auto p : positions) vars.push_back(joint.variables()[p]);
  std::size_t total = 1;
  for (const auto& v : vars) total *= v.cardinality();
  std::vector<double> cells(total, 0.0);
  std::vector<std::size_t> strides(vars.size(), 1);
  for (std::size_t i = vars.size(); i-- > 1;) strides[i - 1] = strides[i] * vars[i].cardinality();
  joint.for_each_cell([&](const Assignment& a, double p) {
    for (const auto& [v, l] : fixed)
      if (a[v] != l) return;
    std::size_t c = 0;
    for (std::size_t i = 0; i < positions.size(); ++i) c += a[positions[i]] * strides[i];
    cells[c] += p / evidence_mass;
  });
  // Renormalize away the rounding of the division.
  const double sum = std::accumulate(cells.begin(), cells.end(), 0.0);
  for (double& p : cells) p /= sum;
  return FiniteJoint(std::move(vars), std::move(cells));
}

template <typename Fn>
double expectation(const FiniteJoint& joint, Fn&& f) {
  double total = 0.0;
  joint.for_each_cell([&](const Assignment& a, double p) {
    if (p != 0.0) total += f(a) * p;
  });
  return total;
}

// Numeric value of a level label ("0", "1", "2.5"); throws for non-numeric.
inline double level_value(const VariableSpec& v, std::size_t level) {
  const std::string& s = v.levels[level];
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw SchemaError("level '" + s + "' of '" + v.name + "' is not numeric");
  return out;
}

/// Text form: one "#var" header line per variable (name then levels, tab
/// separated), then one line per cell in lexicographic order holding the
/// level labels and the probability, tab separated.
inline std::string to_text(const FiniteJoint& joint) {
  std::ostringstream out;
  for (const auto& v : joint.variables()) {
    out << "#var\t" << v.name;
    for (const auto& l : v.levels) out << '\t' << l;
    out << '\n';
  }
  char buf[32];
  joint.for_each_cell([&](const Assignment& a, double p) {
    for (std::size_t k = 0; k < a.size(); ++k) out << joint.variables()[k].levels[a[k]] << '\t';
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out << buf << '\n';
  });
  return out.str();
}

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

inline FiniteJoint joint_from_text(std::string_view text) {
  std::vector<VariableSpec> vars;
  std::vector<double> cells;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields[0] == "#var") {
      if (!cells.empty()) throw SchemaError("line " + std::to_string(line_no) + ": header after cells");
      if (fields.size() < 4)
        throw SchemaError("line " + std::to_string(line_no) + ": variable needs two levels");
      vars.push_back({fields[1], {fields.begin() + 2, fields.end()}});
      continue;
    }
    if (fields.size() != vars.size() + 1)
      throw SchemaError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(vars.size() + 1) + " fields");
    // Cells must appear in lexicographic order.
    std::size_t expected = cells.size();
    for (std::size_t k = vars.size(); k-- > 0;) {
      const std::size_t level = expected % vars[k].cardinality();
      expected /= vars[k].cardinality();
      if (fields[k] != vars[k].levels[level])
        throw SchemaError("line " + std::to_string(line_no) + ": cell out of lexicographic order");
    }
    double p = 0.0;
    const auto& f = fields.back();
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), p);
    if (ec != std::errc() || ptr != f.data() + f.size())
      throw SchemaError("line " + std::to_string(line_no) + ": bad probability '" + f + "'");
    cells.push_back(p);
  }
  return FiniteJoint(std::move(vars), std::move(cells));
}

}  // namespace eqdecomp
