#pragma once

// Comma-separated cohort files: a header row, then one row per unit.
// Fields may be double-quoted ("" escapes a quote; quoted fields may hold
// commas and newlines). Empty fields and NA are missing.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cohort.hpp"
#include "partition.hpp"

namespace eqdecomp {

struct CsvOptions {
  // Columns to load; empty loads every column. Missing values in a loaded
  // column reject the row.
  std::vector<std::string> columns;
  // Declared levels make a column categorical with exactly those labels.
  std::map<std::string, std::vector<std::string>> levels;
  // Columns read as categorical with levels in sorted order of appearance
  // when no levels are declared. Other undeclared columns are numeric.
  std::set<std::string> categorical;
  // Rows whose value here differs from the level are dropped.
  std::optional<SelectionBinding> selection;
};

struct CsvResult {
  CohortTable table;
  std::size_t rows_read = 0;
  std::size_t rejected_missing = 0;
  std::size_t dropped_by_selection = 0;
};

namespace detail {

// Splits a CSV stream into records of fields. `line` of each record is the
// 1-based physical line it starts on.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  bool next(std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    int c = in_.get();
    if (c == EOF) return false;
    line = ++line_;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (;; c = in_.get()) {
      if (quoted) {
        if (c == EOF) throw ParseError(line, "?", "unterminated quoted field");
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field += '"';
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line_;
          field += static_cast<char>(c);
        }
        continue;
      }
      if (c == '"') {
        if (!field.empty() || was_quoted) throw ParseError(line, "?", "stray quote inside a field");
        quoted = was_quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
        was_quoted = false;
      } else if (c == '\n' || c == EOF) {
        if (!field.empty() && field.back() == '\r' && !was_quoted) field.pop_back();
        fields.push_back(std::move(field));
        return true;
      } else if (c == '\r' && in_.peek() == '\n') {
        continue;
      } else {
        if (was_quoted) throw ParseError(line, "?", "text after a closing quote");
        field += static_cast<char>(c);
      }
    }
  }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA"; }

inline std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}

inline std::string quote(const std::string& s) {
  if (!needs_quotes(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Reads a cohort. Row numbers in errors count the header as row 1.
inline CsvResult read_csv(std::istream& in, const CsvOptions& opt = {}) {
  detail::CsvReader reader(in);
  std::vector<std::string> header, fields;
  std::size_t line = 0;
  if (!reader.next(header, line)) throw ValidationError("input has no header row");
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
  std::map<std::string, std::size_t> where;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k].empty()) throw ParseError(1, "#" + std::to_string(k + 1), "empty column name");
    if (!where.emplace(header[k], k).second) throw ParseError(1, header[k], "duplicate column name");
  }
  auto index_of = [&](const std::string& name) {
    const auto it = where.find(name);
    if (it == where.end()) throw SchemaError("column '" + name + "' is not in the input header");
    return it->second;
  };
  std::vector<std::string> wanted = opt.columns.empty() ? header : opt.columns;
  std::vector<std::size_t> cols;
  for (const auto& name : wanted) cols.push_back(index_of(name));
  for (const auto& [name, lv] : opt.levels) index_of(name);
  std::optional<std::size_t> sel;
  if (opt.selection) sel = index_of(opt.selection->variable);

  CsvResult out;
  std::vector<std::vector<std::string>> raw(cols.size());
  std::vector<std::size_t> row_line;
  while (reader.next(fields, line)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != header.size())
      throw ParseError(line, header[std::min(fields.size(), header.size()) - 1],
                       "expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()));
    ++out.rows_read;
    if (sel) {
      if (detail::is_missing(fields[*sel])) {
        ++out.rejected_missing;
        continue;
      }
      if (fields[*sel] != opt.selection->level) {
        ++out.dropped_by_selection;
        continue;
      }
    }
    if (std::any_of(cols.begin(), cols.end(), [&](std::size_t k) { return detail::is_missing(fields[k]); })) {
      ++out.rejected_missing;
      continue;
    }
    for (std::size_t j = 0; j < cols.size(); ++j) raw[j].push_back(std::move(fields[cols[j]]));
    row_line.push_back(line);
  }
  if (out.rows_read == 0) throw ValidationError("input has a header but no data rows (empty cohort)");
  if (row_line.empty())
    throw ValidationError("no rows remain after selection and missing-value rejection (empty cohort)");

  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& name = wanted[j];
    const auto declared = opt.levels.find(name);
    if (declared != opt.levels.end() || opt.categorical.contains(name)) {
      std::vector<std::string> levels;
      if (declared != opt.levels.end()) {
        levels = declared->second;
      } else {
        std::set<std::string> seen(raw[j].begin(), raw[j].end());
        levels.assign(seen.begin(), seen.end());
        if (levels.size() < 2)
          throw SchemaError("column '" + name + "' takes a single value; declare its levels");
      }
      std::map<std::string, std::uint32_t> code;
      for (std::size_t l = 0; l < levels.size(); ++l) code.emplace(levels[l], static_cast<std::uint32_t>(l));
      std::vector<std::uint32_t> codes;
      codes.reserve(raw[j].size());
      for (std::size_t i = 0; i < raw[j].size(); ++i) {
        const auto it = code.find(raw[j][i]);
        if (it == code.end()) throw ParseError(row_line[i], name, "undeclared level '" + raw[j][i] + "'");
        codes.push_back(it->second);
      }
      out.table.add_categorical(name, std::move(levels), std::move(codes));
    } else {
      std::vector<double> values;
      values.reserve(raw[j].size());
      for (std::size_t i = 0; i < raw[j].size(); ++i) {
        const auto v = detail::parse_number(raw[j][i]);
        if (!v) throw ParseError(row_line[i], name, "'" + raw[j][i] + "' is not a number");
        values.push_back(*v);
      }
      out.table.add_numeric(name, std::move(values));
    }
  }
  return out;
}

inline CsvResult read_csv(const std::string& path, const CsvOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open input '" + path + "'");
  return read_csv(in, opt);
}

/// Declared levels of every categorical column, for reading a file back.
inline std::map<std::string, std::vector<std::string>> declared_levels(const CohortTable& t) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& c : t.columns())
    if (c.categorical()) out[c.name] = c.levels;
  return out;
}

/// Writes every column; numbers with 17 significant digits so that reading
/// the file back reproduces the table exactly. Case weights are not written.
inline void write_csv(std::ostream& out, const CohortTable& t) {
  const auto& cols = t.columns();
  for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << detail::quote(cols[k].name);
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (k) out << ',';
      const auto& c = cols[k];
      if (c.categorical()) {
        out << detail::quote(c.levels[c.codes[i]]);
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", c.values[i]);
        out << buf;
      }
    }
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const CohortTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_csv(out, t);
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

}  // namespace eqdecomp
