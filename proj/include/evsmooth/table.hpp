#pragma once

// Minimal column-oriented data table with CSV input/output. Every column keeps
// its raw text (used for group identifiers) and a numeric view in which the NA
// token and unparseable cells are NaN.

#include "evsmooth/error.hpp"

#include <Eigen/Core>

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace evsmooth {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double parse_number(const std::string& s, const std::string& na_token = "NA") {
  if (s.empty() || s == na_token) return kNaN;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
  double v = kNaN;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) {
    // from_chars rejects "inf"/"Inf" spellings used by other tools
    std::string t(b, e);
    if (t == "Inf" || t == "inf") return std::numeric_limits<double>::infinity();
    if (t == "-Inf" || t == "-inf") return -std::numeric_limits<double>::infinity();
    return kNaN;
  }
  return v;
}

// Shortest round-trip text for a double.
inline std::string format_number(double v, const std::string& na_token = "NA") {
  if (std::isnan(v)) return na_token;
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

class DataTable {
 public:
  DataTable() = default;

  std::size_t rows() const { return rows_; }
  const std::vector<std::string>& names() const { return names_; }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  void add_column(const std::string& name, std::vector<std::string> text,
                  const std::string& na_token = "NA") {
    std::vector<double> num(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) num[i] = parse_number(text[i], na_token);
    add(name, std::move(text), std::move(num));
  }

  void add_column(const std::string& name, const std::vector<double>& values) {
    std::vector<std::string> text(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) text[i] = format_number(values[i]);
    add(name, std::move(text), values);
  }

  void add_column(const std::string& name, const Eigen::VectorXd& values) {
    add_column(name, std::vector<double>(values.data(), values.data() + values.size()));
  }

  const std::vector<double>& numeric(const std::string& name) const { return col(name).num; }
  const std::vector<std::string>& text(const std::string& name) const { return col(name).text; }

  Eigen::VectorXd vector(const std::string& name) const {
    const auto& v = numeric(name);
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  DataTable select_rows(const std::vector<std::size_t>& idx) const {
    DataTable out;
    for (const auto& name : names_) {
      const auto& c = col(name);
      std::vector<std::string> t;
      std::vector<double> n;
      t.reserve(idx.size());
      n.reserve(idx.size());
      for (auto i : idx) {
        t.push_back(c.text[i]);
        n.push_back(c.num[i]);
      }
      out.add(name, std::move(t), std::move(n));
    }
    if (names_.empty()) out.rows_ = idx.size();
    return out;
  }

  static DataTable read_csv(std::istream& in, const std::string& na_token = "NA") {
    std::string line;
    if (!std::getline(in, line)) throw IoError("CSV input is empty");
    const auto header = split(strip_cr(line));
    std::vector<std::vector<std::string>> cells(header.size());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      auto f = split(line);
      if (f.size() != header.size()) {
        throw IoError("CSV line " + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
      }
      for (std::size_t j = 0; j < f.size(); ++j) cells[j].push_back(std::move(f[j]));
    }
    DataTable t;
    for (std::size_t j = 0; j < header.size(); ++j) t.add_column(header[j], std::move(cells[j]), na_token);
    return t;
  }

  static DataTable read_csv_file(const std::string& path, const std::string& na_token = "NA") {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_csv(in, na_token);
  }

  void write_csv(std::ostream& out) const {
    for (std::size_t j = 0; j < names_.size(); ++j) out << (j ? "," : "") << quote(names_[j]);
    out << '\n';
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < names_.size(); ++j) {
        out << (j ? "," : "") << quote(columns_[j].text[i]);
      }
      out << '\n';
    }
  }

  void write_csv_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_csv(out);
  }

 private:
  struct Column {
    std::vector<std::string> text;
    std::vector<double> num;
  };

  const Column& col(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("data has no column '" + name + "'");
    return columns_[it->second];
  }

  void add(const std::string& name, std::vector<std::string> text, std::vector<double> num) {
    if (!names_.empty() && text.size() != rows_) {
      throw DataError("column '" + name + "' has " + std::to_string(text.size()) +
                      " rows, table has " + std::to_string(rows_));
    }
    rows_ = text.size();
    auto it = index_.find(name);
    if (it != index_.end()) {
      columns_[it->second] = {std::move(text), std::move(num)};
      return;
    }
    index_[name] = columns_.size();
    names_.push_back(name);
    columns_.push_back({std::move(text), std::move(num)});
  }

  static std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  }

  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    out.push_back(std::move(cur));
    return out;
  }

  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  }

  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
};

}  // namespace evsmooth
