#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dist_core.hpp"
#include "errors.hpp"

namespace eqdecomp {

struct Column {
  enum class Kind { Categorical, Numeric };

  std::string name;
  Kind kind = Kind::Categorical;
  std::vector<std::string> levels;   // categorical only
  std::vector<std::uint32_t> codes;  // categorical only
  std::vector<double> values;        // numeric only

  bool categorical() const noexcept { return kind == Kind::Categorical; }
  std::size_t size() const noexcept { return categorical() ? codes.size() : values.size(); }

  std::uint32_t code_of(std::string_view label) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == label) return static_cast<std::uint32_t>(i);
    throw SchemaError("column '" + name + "' has no level '" + std::string(label) + "'");
  }

  // Numeric reading of a row: the value itself, or the numeric label.
  double number(std::size_t row) const {
    if (!categorical()) return values[row];
    return level_value(VariableSpec{name, levels}, codes[row]);
  }
};

/// Row-level cohort with typed columns and a case weight per row. Case
/// weights are 1 for ordinary data; enumerated joints carry cell
/// probabilities and bootstrap replicates carry resampling multiplicities.
class CohortTable {
 public:
  CohortTable() = default;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t width() const noexcept { return columns_.size(); }
  const std::vector<Column>& columns() const noexcept { return columns_; }

  void add_categorical(std::string name, std::vector<std::string> levels,
                       std::vector<std::uint32_t> codes) {
    validate_variable(VariableSpec{name, levels});
    for (auto c : codes)
      if (c >= levels.size()) throw SchemaError("column '" + name + "' has an out-of-range code");
    Column col;
    col.name = std::move(name);
    col.kind = Column::Kind::Categorical;
    col.levels = std::move(levels);
    col.codes = std::move(codes);
    push(std::move(col));
  }

  void add_numeric(std::string name, std::vector<double> values) {
    Column col;
    col.name = std::move(name);
    col.kind = Column::Kind::Numeric;
    col.values = std::move(values);
    push(std::move(col));
  }

  const Column* find(std::string_view name) const {
    for (const auto& c : columns_)
      if (c.name == name) return &c;
    return nullptr;
  }

  const Column& column(std::string_view name) const {
    if (const auto* c = find(name)) return *c;
    throw SchemaError("missing column '" + std::string(name) + "'");
  }

  std::span<const double> case_weights() const noexcept { return weights_; }
  double case_weight(std::size_t row) const { return weights_[row]; }

  void set_case_weights(std::vector<double> w) {
    if (w.size() != rows_) throw SchemaError("case weight count differs from row count");
    for (double x : w)
      if (!(x >= 0.0) || !std::isfinite(x)) throw SchemaError("case weights must be finite and >= 0");
    weights_ = std::move(w);
  }

  // Same columns, case weights multiplied by `factor` rowwise.
  CohortTable reweighted(std::span<const double> factor) const {
    CohortTable out = *this;
    for (std::size_t i = 0; i < rows_; ++i) out.weights_[i] *= factor[i];
    return out;
  }

  // Rows at `index` (repeats allowed), in that order.
  CohortTable subset(std::span<const std::size_t> index) const {
    CohortTable out;
    for (const auto& c : columns_) {
      Column copy;
      copy.name = c.name;
      copy.kind = c.kind;
      copy.levels = c.levels;
      if (c.categorical()) {
        copy.codes.reserve(index.size());
        for (auto i : index) copy.codes.push_back(c.codes[i]);
      } else {
        copy.values.reserve(index.size());
        for (auto i : index) copy.values.push_back(c.values[i]);
      }
      out.columns_.push_back(std::move(copy));
    }
    out.rows_ = index.size();
    out.weights_.reserve(index.size());
    for (auto i : index) out.weights_.push_back(weights_[i]);
    return out;
  }

  // Rows of the categorical `column` at `level`.
  std::vector<std::size_t> rows_where(std::string_view column_name, std::string_view level) const {
    const auto& c = column(column_name);
    if (!c.categorical()) throw SchemaError("column '" + c.name + "' is not categorical");
    const auto code = c.code_of(level);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows_; ++i)
      if (c.codes[i] == code) out.push_back(i);
    return out;
  }

  // Copy with every row of a categorical column set to one level.
  CohortTable with_constant(std::string_view column_name, std::uint32_t code) const {
    CohortTable out = *this;
    for (auto& c : out.columns_)
      if (c.name == column_name) {
        if (!c.categorical()) throw SchemaError("column '" + c.name + "' is not categorical");
        std::fill(c.codes.begin(), c.codes.end(), code);
        return out;
      }
    throw SchemaError("missing column '" + std::string(column_name) + "'");
  }

  double total_weight() const { return std::accumulate(weights_.begin(), weights_.end(), 0.0); }

 private:
  void push(Column col) {
    if (find(col.name)) throw SchemaError("duplicate column '" + col.name + "'");
    if (columns_.empty()) {
      rows_ = col.size();
      weights_.assign(rows_, 1.0);
    } else if (col.size() != rows_) {
      throw SchemaError("column '" + col.name + "' has " + std::to_string(col.size()) +
                        " rows, expected " + std::to_string(rows_));
    }
    columns_.push_back(std::move(col));
  }

  std::vector<Column> columns_;
  std::vector<double> weights_;
  std::size_t rows_ = 0;
};

/// One row per positive-probability cell, case weight = cell probability.
/// Saturated fits on this table reproduce the joint's conditionals.
inline CohortTable enumerate_joint(const FiniteJoint& joint) {
  std::vector<std::vector<std::uint32_t>> codes(joint.dimension());
  std::vector<double> weights;
  joint.for_each_cell([&](const Assignment& a, double p) {
    if (!(p > 0.0)) return;
    for (std::size_t k = 0; k < a.size(); ++k) codes[k].push_back(static_cast<std::uint32_t>(a[k]));
    weights.push_back(p);
  });
  CohortTable out;
  for (std::size_t k = 0; k < joint.dimension(); ++k)
    out.add_categorical(joint.variables()[k].name, joint.variables()[k].levels, std::move(codes[k]));
  out.set_case_weights(std::move(weights));
  return out;
}

}  // namespace eqdecomp
