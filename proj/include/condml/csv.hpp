#pragma once

#include "condml/common.hpp"
#include "condml/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace condml {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;  // column major, aligned with header

  Index rows() const { return columns.empty() ? 0 : static_cast<Index>(columns[0].size()); }

  Index column_index(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return static_cast<Index>(j);
    }
    throw std::invalid_argument("csv column not found: " + name);
  }
};

namespace detail {

// One RFC-4180 record; handles quoted fields, embedded commas, and "" escapes.
// Returns false at end of input.
inline bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool saw_any = false;
  int c;
  while ((c = in.get()) != EOF) {
    saw_any = true;
    const char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else if (ch == '\r') {
      // swallow; newline handling below
    } else if (ch == '\n') {
      fields.push_back(field);
      return true;
    } else {
      field.push_back(ch);
    }
  }
  if (in_quotes) throw std::invalid_argument("csv: unterminated quoted field");
  if (!saw_any) return false;
  fields.push_back(field);
  return true;
}

inline double parse_number(const std::string& s, Index row, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    while (used < s.size() && (s[used] == ' ' || s[used] == '\t')) ++used;
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("csv: non-numeric value '" + s + "' in column " + col +
                                " at data row " + std::to_string(row + 1));
  }
}

}  // namespace detail

/// Raw CSV contents: header plus string cells, for files that mix text and
/// numeric columns.
struct RawCsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline RawCsvTable read_csv_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open csv file: " + path);
  RawCsvTable table;
  if (!detail::read_record(in, table.header) || table.header.empty()) {
    throw std::invalid_argument("csv: missing header row in " + path);
  }
  std::vector<std::string> fields;
  while (detail::read_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
    if (fields.size() != table.header.size()) {
      throw std::invalid_argument("csv: row " + std::to_string(table.rows.size() + 1) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(table.header.size()));
    }
    table.rows.push_back(fields);
  }
  return table;
}

/// Read a whole CSV file with a required header row; every data cell must
/// parse as a number.
inline CsvTable read_csv(const std::string& path) {
  const RawCsvTable raw = read_csv_raw(path);
  CsvTable table;
  table.header = raw.header;
  table.columns.assign(table.header.size(), {});
  for (std::size_t i = 0; i < raw.rows.size(); ++i) {
    for (std::size_t j = 0; j < raw.rows[i].size(); ++j) {
      table.columns[j].push_back(
          detail::parse_number(raw.rows[i][j], static_cast<Index>(i), table.header[j]));
    }
  }
  return table;
}

/// Format a double with 17 significant digits so that the decimal text
/// round-trips to the identical binary value.
inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot open file for writing: " + path);
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << header[j];
  }
  out << '\n';
  const std::size_t rows = columns.empty() ? 0 : columns[0].size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      if (j) out << ',';
      out << format_g17(columns[j][i]);
    }
    out << '\n';
  }
}

/// Column-role map used at ingestion: which CSV columns play Y, D, and Z, and
/// how V is derived from Z. V must be a function of Z, so "select" names a
/// subset of the z columns and "sum"/"mean" aggregate all of them. Richer
/// transforms go through the library interface.
struct ColumnRoles {
  std::string y;
  std::string d;
  std::vector<std::string> z;
  std::vector<std::string> v;        // for transform == "select"
  std::string v_transform = "select";  // select | sum | mean
};

inline Dataset load_dataset(const CsvTable& table, const ColumnRoles& roles) {
  const Index n = table.rows();
  if (n < 1) throw std::invalid_argument("csv: no data rows");
  if (roles.z.empty()) throw std::invalid_argument("column roles: need at least one z column");

  auto column = [&](const std::string& name) -> const std::vector<double>& {
    return table.columns[static_cast<std::size_t>(table.column_index(name))];
  };

  VectorXd y(n);
  VectorXd d(n);
  const auto& yc = column(roles.y);
  const auto& dc = column(roles.d);
  MatrixXd z(n, static_cast<Index>(roles.z.size()));
  for (std::size_t j = 0; j < roles.z.size(); ++j) {
    const auto& c = column(roles.z[j]);
    for (Index i = 0; i < n; ++i) z(i, static_cast<Index>(j)) = c[static_cast<std::size_t>(i)];
  }
  for (Index i = 0; i < n; ++i) {
    y[i] = yc[static_cast<std::size_t>(i)];
    d[i] = dc[static_cast<std::size_t>(i)];
  }

  MatrixXd v;
  if (roles.v_transform == "select") {
    if (roles.v.empty()) {
      throw std::invalid_argument("column roles: v selection requires at least one column name");
    }
    v.resize(n, static_cast<Index>(roles.v.size()));
    for (std::size_t j = 0; j < roles.v.size(); ++j) {
      bool in_z = false;
      for (const auto& zn : roles.z) in_z = in_z || (zn == roles.v[j]);
      if (!in_z) {
        throw std::invalid_argument("column roles: v column '" + roles.v[j] +
                                    "' must be one of the z columns (V is a function of Z)");
      }
      const auto& c = column(roles.v[j]);
      for (Index i = 0; i < n; ++i) v(i, static_cast<Index>(j)) = c[static_cast<std::size_t>(i)];
    }
  } else if (roles.v_transform == "sum" || roles.v_transform == "mean") {
    v.resize(n, 1);
    const double scale = roles.v_transform == "mean" ? 1.0 / static_cast<double>(roles.z.size()) : 1.0;
    for (Index i = 0; i < n; ++i) v(i, 0) = z.row(i).sum() * scale;
  } else {
    throw std::invalid_argument("column roles: unknown v transform '" + roles.v_transform + "'");
  }

  return Dataset(std::move(y), std::move(d), std::move(z), std::move(v));
}

inline Dataset load_dataset(const std::string& path, const ColumnRoles& roles) {
  return load_dataset(read_csv(path), roles);
}

}  // namespace condml
