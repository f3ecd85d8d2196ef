#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

namespace saved {

/// One table cell: a finite number, a text value, or an explicit missing
/// marker.  NaN is never stored; missing data uses the Missing alternative.
struct Missing {
  bool operator==(const Missing&) const { return true; }
};

class CellValue {
 public:
  CellValue() : value_(Missing{}) {}
  static CellValue number(double v) {
    if (std::isnan(v)) {
      throw std::invalid_argument("CellValue: NaN is not a storable number");
    }
    CellValue c;
    c.value_ = v;
    return c;
  }
  static CellValue text(std::string v) {
    CellValue c;
    c.value_ = std::move(v);
    return c;
  }
  static CellValue missing() { return CellValue(); }

  bool is_number() const { return std::holds_alternative<double>(value_); }
  bool is_text() const { return std::holds_alternative<std::string>(value_); }
  bool is_missing() const { return std::holds_alternative<Missing>(value_); }

  double as_number() const { return std::get<double>(value_); }
  const std::string& as_text() const { return std::get<std::string>(value_); }

  bool operator==(const CellValue& other) const { return value_ == other.value_; }

 private:
  std::variant<double, std::string, Missing> value_;
};

enum class ColumnKind { Numeric, Categorical };

/// Formats a double with the shortest decimal representation that parses back
/// to the same bits (at most 17 significant digits, no trailing zeros).
inline std::string format_number(double v) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) {
      break;
    }
  }
  return std::string(buf);
}

/// Full-string parse of a finite double; anything else is not a number.
inline std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) {
    return std::nullopt;
  }
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

/// In-memory relational table: ordered attributes and rows of typed cells.
/// Tables are immutable by convention once built; augmentation operators
/// return fresh copies.
struct Table {
  std::string name;
  std::vector<std::string> attributes;
  std::vector<std::vector<CellValue>> rows;
  std::string source_dataset;

  std::size_t num_columns() const { return attributes.size(); }
  std::size_t num_rows() const { return rows.size(); }

  std::size_t attribute_index(const std::string& attribute) const {
    for (std::size_t j = 0; j < attributes.size(); ++j) {
      if (attributes[j] == attribute) {
        return j;
      }
    }
    throw std::out_of_range("unknown attribute: " + attribute);
  }

  /// Throws if the row shapes or attribute names violate the table contract.
  void validate() const {
    if (attributes.empty()) {
      throw std::invalid_argument("table '" + name + "' has no attributes");
    }
    std::unordered_set<std::string> seen;
    for (const auto& a : attributes) {
      if (!seen.insert(a).second) {
        throw std::invalid_argument("table '" + name + "' repeats attribute '" + a + "'");
      }
    }
    for (const auto& row : rows) {
      if (row.size() != attributes.size()) {
        throw std::invalid_argument("table '" + name + "' has a ragged row");
      }
    }
  }

  bool operator==(const Table& other) const {
    return name == other.name && attributes == other.attributes &&
           rows == other.rows && source_dataset == other.source_dataset;
  }
};

/// Cell rendered as the string used for CSV output and linearization.
/// Missing renders as "nan" in linearization but as an empty CSV field.
inline std::string cell_to_string(const CellValue& cell) {
  if (cell.is_missing()) {
    return "nan";
  }
  if (cell.is_number()) {
    return format_number(cell.as_number());
  }
  return cell.as_text();
}

/// Numeric view of a cell: Number cells directly, Text cells via parsing.
inline std::optional<double> cell_numeric_value(const CellValue& cell) {
  if (cell.is_number()) {
    return cell.as_number();
  }
  if (cell.is_text()) {
    return parse_number(cell.as_text());
  }
  return std::nullopt;
}

/// Numeric iff every non-Missing cell carries a finite number (directly or as
/// parseable text).  An all-Missing column is Categorical.
inline ColumnKind infer_column_kind(const Table& table, const std::string& attribute) {
  const std::size_t j = table.attribute_index(attribute);
  bool any_value = false;
  for (const auto& row : table.rows) {
    const CellValue& cell = row[j];
    if (cell.is_missing()) {
      continue;
    }
    any_value = true;
    if (!cell_numeric_value(cell).has_value()) {
      return ColumnKind::Categorical;
    }
  }
  return any_value ? ColumnKind::Numeric : ColumnKind::Categorical;
}

inline ColumnKind infer_column_kind(const Table& table, std::size_t column) {
  return infer_column_kind(table, table.attributes.at(column));
}

namespace detail {

struct CsvField {
  std::string text;
  bool quoted = false;
};

// RFC-4180-style record reader: quoted fields may contain commas, quotes
// (doubled) and newlines.  Returns false at end of input.
inline bool read_csv_record(std::istream& in, std::vector<CsvField>& fields) {
  fields.clear();
  int c = in.get();
  if (c == EOF) {
    return false;
  }
  CsvField field;
  bool in_quotes = false;
  for (;;) {
    if (c == EOF) {
      fields.push_back(std::move(field));
      return true;
    }
    if (in_quotes) {
      if (c == '"') {
        const int next = in.get();
        if (next == '"') {
          field.text.push_back('"');
        } else {
          in_quotes = false;
          c = next;
          continue;
        }
      } else {
        field.text.push_back(static_cast<char>(c));
      }
    } else if (c == '"' && field.text.empty() && !field.quoted) {
      in_quotes = true;
      field.quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field = CsvField{};
    } else if (c == '\r') {
      const int next = in.get();
      if (next == '\n' || next == EOF) {
        fields.push_back(std::move(field));
        return true;
      }
      field.text.push_back('\r');
      c = next;
      continue;
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else {
      field.text.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
}

inline std::string csv_escape(const std::string& field, bool force_quotes) {
  const bool needs_quotes =
      force_quotes || field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) {
    return field;
  }
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') {
      out += "\"\"";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

/// Loads a comma-separated file with a mandatory header row.  Empty fields
/// become Missing; columns where every non-missing field parses as a finite
/// number are stored as Number cells, all others as Text.
inline Table load_table(const std::string& path, const std::string& name,
                        const std::string& dataset_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::vector<detail::CsvField> record;
  if (!detail::read_csv_record(in, record)) {
    throw std::runtime_error(path + ": empty file");
  }
  Table table;
  table.name = name;
  table.source_dataset = dataset_tag;
  for (auto& field : record) {
    table.attributes.push_back(std::move(field.text));
  }

  std::vector<std::vector<detail::CsvField>> raw_rows;
  while (detail::read_csv_record(in, record)) {
    if (record.size() != table.attributes.size()) {
      throw std::runtime_error(path + ": ragged row " + std::to_string(raw_rows.size() + 2));
    }
    raw_rows.push_back(record);
  }

  const std::size_t cols = table.attributes.size();
  std::vector<bool> numeric(cols, true);
  std::vector<bool> any_value(cols, false);
  for (const auto& row : raw_rows) {
    for (std::size_t j = 0; j < cols; ++j) {
      const auto& f = row[j];
      if (f.text.empty() && !f.quoted) {
        continue;
      }
      any_value[j] = true;
      if (!parse_number(f.text).has_value()) {
        numeric[j] = false;
      }
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    if (!any_value[j]) {
      numeric[j] = false;  // all-Missing columns are Categorical
    }
  }

  table.rows.reserve(raw_rows.size());
  for (const auto& raw : raw_rows) {
    std::vector<CellValue> row;
    row.reserve(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      const auto& f = raw[j];
      if (f.text.empty() && !f.quoted) {
        row.push_back(CellValue::missing());
      } else if (numeric[j]) {
        row.push_back(CellValue::number(*parse_number(f.text)));
      } else {
        row.push_back(CellValue::text(f.text));
      }
    }
    table.rows.push_back(std::move(row));
  }
  table.validate();
  return table;
}

/// Writes the table as CSV.  Missing cells become empty fields; empty text
/// cells are written quoted so the round trip keeps them distinct.
inline void save_table(const Table& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  for (std::size_t j = 0; j < table.attributes.size(); ++j) {
    if (j > 0) {
      out << ',';
    }
    out << detail::csv_escape(table.attributes[j], false);
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) {
        out << ',';
      }
      const CellValue& cell = row[j];
      if (cell.is_missing()) {
        // empty field
      } else if (cell.is_number()) {
        out << format_number(cell.as_number());
      } else {
        out << detail::csv_escape(cell.as_text(), cell.as_text().empty());
      }
    }
    out << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

}  // namespace saved
