#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cohort.hpp"
#include "gformula.hpp"

namespace eqdecomp {

enum class WeightFormula { GroupStdR0, GroupStdR0Prime, RMPW, IORW };

inline std::string_view to_string(WeightFormula f) {
  switch (f) {
    case WeightFormula::GroupStdR0: return "w_r0";
    case WeightFormula::GroupStdR0Prime: return "w_r0prime";
    case WeightFormula::RMPW: return "w_rmpw";
    case WeightFormula::IORW: return "w_iorw";
  }
  return "?";
}

struct WeightDiagnostics {
  std::size_t count = 0;
  std::size_t zeros = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;  // case-weighted mean within the group
  double ess = 0.0;   // (sum c w)^2 / sum c w^2
  std::optional<double> cap;
  std::size_t truncated = 0;
};

/// Weights attached to the rows of one race group of a cohort table.
struct WeightVector {
  WeightFormula formula = WeightFormula::GroupStdR0;
  Standardization standardization = Standardization::Pooled;
  std::vector<std::size_t> rows;
  std::vector<double> values;
  WeightDiagnostics diagnostics;
};

inline WeightDiagnostics diagnose(std::span<const double> values, std::span<const double> case_weights) {
  WeightDiagnostics d;
  d.count = values.size();
  if (values.empty()) return d;
  d.min = *std::min_element(values.begin(), values.end());
  d.max = *std::max_element(values.begin(), values.end());
  double c = 0.0, cw = 0.0, cw2 = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == 0.0) ++d.zeros;
    c += case_weights[i];
    cw += case_weights[i] * values[i];
    cw2 += case_weights[i] * values[i] * values[i];
  }
  d.mean = c > 0.0 ? cw / c : 0.0;
  d.ess = cw2 > 0.0 ? cw * cw / cw2 : 0.0;
  return d;
}

/// Per-row conditional probabilities behind every weight family, evaluated
/// at each row's own covariates and observed target level. Vectors span all
/// rows of the table; NaN marks an undefined conditional.
struct WeightInputs {
  double p_r0 = 0.0;
  std::vector<double> r0_given_ay;    // P(r0 | a^y)
  std::vector<double> m_given_r1_a;   // P(m | r0', a^m, a^y)
  std::vector<double> m_given_r0_na;  // P(m | r0, n, a^m, a^y)
  std::vector<double> r1_given_m_a;   // P(r0' | m, a^m, a^y)
  std::vector<double> r0_given_m_na;  // P(r0 | m, n, a^m, a^y)
  std::vector<double> r1_given_a;     // P(r0' | a^m, a^y)
  std::vector<double> r0_given_na;    // P(r0 | n, a^m, a^y)
  std::vector<double> m_given_a;      // P(m | a^m, a^y)
  std::vector<double> m_given_na;     // P(m | n, a^m, a^y)
};

using RowDescriber = std::function<std::string(std::size_t)>;

namespace detail {

inline std::string row_label(const RowDescriber& describe, std::size_t row) {
  return describe ? describe(row) : "row " + std::to_string(row + 1);
}

inline double checked(double p, const char* what, const RowDescriber& describe, std::size_t row,
                      bool allow_zero = false) {
  if (std::isnan(p))
    throw PositivityError(std::string(what) + " is undefined at " + row_label(describe, row) +
                          " (empty conditioning stratum)");
  if (p < 0.0 || p > 1.0 || (!allow_zero && !(p > 0.0)))
    throw PositivityError(std::string(what) + " = " + std::to_string(p) + " at " +
                          row_label(describe, row));
  return p;
}

}  // namespace detail

/// Group standardization factor for one row: P(g)/P(g|a^y) under the pooled
/// standard, times P(r0|a^y)/P(r0) or P(r0'|a^y)/P(r0') for the group
/// standards.
inline double standardization_factor(double r0_given_ay, double p_r0, Group g, Standardization s) {
  const double p = r0_given_ay;
  switch (s) {
    case Standardization::Pooled:
      return g == Group::R0 ? p_r0 / p : (1.0 - p_r0) / (1.0 - p);
    case Standardization::MarginalizedToR0:
      return g == Group::R0 ? 1.0 : (1.0 - p_r0) / (1.0 - p) * p / p_r0;
    case Standardization::MarginalizedToR0Prime:
      return g == Group::R0 ? p_r0 / p * (1.0 - p) / (1.0 - p_r0) : 1.0;
  }
  return 0.0;
}

inline WeightVector group_standardization_weight(const WeightInputs& in,
                                                 std::span<const std::size_t> rows, Group g,
                                                 Standardization s,
                                                 std::span<const double> case_weights,
                                                 const RowDescriber& describe = {}) {
  WeightVector out;
  out.formula = g == Group::R0 ? WeightFormula::GroupStdR0 : WeightFormula::GroupStdR0Prime;
  out.standardization = s;
  out.rows.assign(rows.begin(), rows.end());
  std::vector<double> c;
  for (auto r : rows) {
    const double p = detail::checked(in.r0_given_ay[r], "P(r0 | outcome-allowables)", describe, r);
    if (!(p < 1.0))
      throw PositivityError("P(r0 | outcome-allowables) = 1 at " + detail::row_label(describe, r));
    out.values.push_back(standardization_factor(p, in.p_r0, g, s));
    c.push_back(case_weights[r]);
  }
  out.diagnostics = diagnose(out.values, c);
  return out;
}

/// P(m|r0',a^m,a^y) / P(m|r0,n,a^m,a^y) times the r0 standardization
/// factor, on r0 rows. A zero numerator gives weight 0: the intervention
/// never assigns that target level in the row's stratum.
inline WeightVector rmpw_weight(const WeightInputs& in, std::span<const std::size_t> r0_rows,
                                Standardization s, std::span<const double> case_weights,
                                const RowDescriber& describe = {}) {
  WeightVector out;
  out.formula = WeightFormula::RMPW;
  out.standardization = s;
  out.rows.assign(r0_rows.begin(), r0_rows.end());
  std::vector<double> c;
  for (auto r : r0_rows) {
    const double num =
        detail::checked(in.m_given_r1_a[r], "P(m | r0', target-allowables)", describe, r, true);
    const double den =
        detail::checked(in.m_given_r0_na[r], "P(m | r0, covariates)", describe, r);
    const double p = detail::checked(in.r0_given_ay[r], "P(r0 | outcome-allowables)", describe, r);
    out.values.push_back(num / den * standardization_factor(p, in.p_r0, Group::R0, s));
    c.push_back(case_weights[r]);
  }
  out.diagnostics = diagnose(out.values, c);
  return out;
}

/// Inverse-odds-ratio form on r0 rows:
///   [P(r0'|m,a^m,a^y) / P(r0|m,n,a^m,a^y)] / [P(r0'|a^m,a^y) / P(r0|n,a^m,a^y)]
///   x P(m|a^m,a^y) / P(m|n,a^m,a^y) x r0 standardization factor.
/// The middle ratio is exactly 1 when the two target inputs coincide (N empty).
inline WeightVector iorw_weight(const WeightInputs& in, std::span<const std::size_t> r0_rows,
                                Standardization s, std::span<const double> case_weights,
                                const RowDescriber& describe = {}) {
  WeightVector out;
  out.formula = WeightFormula::IORW;
  out.standardization = s;
  out.rows.assign(r0_rows.begin(), r0_rows.end());
  std::vector<double> c;
  for (auto r : r0_rows) {
    const double a = detail::checked(in.r1_given_m_a[r], "P(r0' | m, target-allowables)", describe, r, true);
    const double b = detail::checked(in.r0_given_m_na[r], "P(r0 | m, covariates)", describe, r);
    const double c1 = detail::checked(in.r1_given_a[r], "P(r0' | target-allowables)", describe, r);
    const double d = detail::checked(in.r0_given_na[r], "P(r0 | covariates)", describe, r);
    const double ma = detail::checked(in.m_given_a[r], "P(m | target-allowables)", describe, r);
    const double mna = detail::checked(in.m_given_na[r], "P(m | covariates)", describe, r);
    const double p = detail::checked(in.r0_given_ay[r], "P(r0 | outcome-allowables)", describe, r);
    out.values.push_back((a / b) / (c1 / d) * (ma / mna) * standardization_factor(p, in.p_r0, Group::R0, s));
    c.push_back(case_weights[r]);
  }
  out.diagnostics = diagnose(out.values, c);
  return out;
}

// Type-7 sample quantile of unsorted values.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Caps weights above the given percentile (0-100) of the group's weights.
inline void truncate_weights(WeightVector& w, double percentile, std::span<const double> case_weights) {
  if (!(percentile > 0.0 && percentile <= 100.0))
    throw ValidationError("truncation percentile must lie in (0, 100]");
  if (w.values.empty()) return;
  const double cap = quantile(w.values, percentile / 100.0);
  std::size_t n = 0;
  for (auto& v : w.values)
    if (v > cap) {
      v = cap;
      ++n;
    }
  std::vector<double> c;
  for (auto r : w.rows) c.push_back(case_weights[r]);
  w.diagnostics = diagnose(w.values, c);
  w.diagnostics.cap = cap;
  w.diagnostics.truncated = n;
}

/// Weight inputs from the exact conditionals of a joint, evaluated at the
/// rows of `rows` (columns named and labelled as the joint's variables).
inline WeightInputs exact_weight_inputs(const ExactModel& model, const CohortTable& rows) {
  const auto& J = model.joint;
  const std::size_t d = J.dimension();
  std::vector<const Column*> cols(d);
  std::vector<std::vector<std::size_t>> to_level(d);
  for (std::size_t k = 0; k < d; ++k) {
    const auto& var = J.variables()[k];
    cols[k] = &rows.column(var.name);
    for (const auto& label : cols[k]->levels) to_level[k].push_back(J.level_index(k, label));
  }
  const std::vector<std::size_t> race{0};
  const std::vector<std::size_t> mpos{model.m};
  const Marginal ay(J, model.ay);
  const Marginal r_ay(J, concat({race, model.ay}));
  const Marginal a(J, concat({model.am, model.ay}));
  const Marginal r_a(J, concat({race, model.am, model.ay}));
  const Marginal na(J, concat({model.n, model.am, model.ay}));
  const Marginal r_na(J, concat({race, model.n, model.am, model.ay}));
  const Marginal m_a(J, concat({mpos, model.am, model.ay}));
  const Marginal r_m_a(J, concat({race, mpos, model.am, model.ay}));
  const Marginal m_na(J, concat({mpos, model.n, model.am, model.ay}));
  const Marginal r_m_na(J, concat({race, mpos, model.n, model.am, model.ay}));
  const auto ratio = [](double num, double den) {
    return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  };

  WeightInputs in;
  in.p_r0 = model.p_r0;
  const std::size_t n = rows.rows();
  for (auto* v : {&in.r0_given_ay, &in.m_given_r1_a, &in.m_given_r0_na, &in.r1_given_m_a,
                  &in.r0_given_m_na, &in.r1_given_a, &in.r0_given_na, &in.m_given_a, &in.m_given_na})
    v->resize(n);
  Assignment x(d, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) x[k] = to_level[k][cols[k]->codes[i]];
    x[0] = model.r0;
    const double r0_ay = r_ay.at(x), r0_na = r_na.at(x);
    const double r0_m_na = r_m_na.at(x);
    x[0] = model.r1;
    const double r1_a = r_a.at(x), r1_m_a = r_m_a.at(x);
    in.r0_given_ay[i] = ratio(r0_ay, ay.at(x));
    in.m_given_r1_a[i] = ratio(r1_m_a, r1_a);
    in.m_given_r0_na[i] = ratio(r0_m_na, r0_na);
    in.r1_given_m_a[i] = ratio(r1_m_a, m_a.at(x));
    in.r0_given_m_na[i] = ratio(r0_m_na, m_na.at(x));
    in.r1_given_a[i] = ratio(r1_a, a.at(x));
    in.r0_given_na[i] = ratio(r0_na, na.at(x));
    in.m_given_a[i] = ratio(m_a.at(x), a.at(x));
    in.m_given_na[i] = ratio(m_na.at(x), na.at(x));
  }
  return in;
}

}  // namespace eqdecomp
