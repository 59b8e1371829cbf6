// Copyright 2026 The raceline3d Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

//     https://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RACELINE_CSV_HPP_
#define RACELINE_CSV_HPP_

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace raceline {

// All numeric file output goes through this formatter so that reruns produce
// byte-identical files: 9 significant digits, shortest form.
inline std::string format_g9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return std::string(buf);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    size_t b = s.find_first_not_of(" \t");
    size_t e = s.find_last_not_of(" \t");
    s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  bool has_column(const std::string& name) const { return column(name) >= 0; }
};

// Reads a CSV with one header row; '#' lines and blank lines are skipped.
// Parse failures report the 1-based line number.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  CsvTable t;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (cells.empty() || (cells.size() == 1 && cells[0].empty())) continue;
    if (!have_header) {
      t.header = cells;
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(t.header.size()) +
                               " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
      try {
        size_t pos = 0;
        row[i] = std::stod(cells[i], &pos);
        if (pos != cells[i].size()) throw std::invalid_argument(cells[i]);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": not a number: '" + cells[i] + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error(path + ": missing header row");
  return t;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_g9(r[i]);
    out << "\n";
  }
}

// Plain `key = value` configuration files; '#' starts a comment, order kept.
struct KeyValueFile {
  std::vector<std::pair<std::string, std::string>> items;

  bool has(const std::string& key) const {
    for (const auto& kv : items)
      if (kv.first == key) return true;
    return false;
  }
  std::string get(const std::string& key, const std::string& fallback = "") const {
    for (const auto& kv : items)
      if (kv.first == key) return kv.second;
    return fallback;
  }
  double get_num(const std::string& key, double fallback) const {
    for (const auto& kv : items)
      if (kv.first == key) return std::stod(kv.second);
    return fallback;
  }
  void set(const std::string& key, const std::string& value) {
    for (auto& kv : items)
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    items.emplace_back(key, value);
  }
  void set_num(const std::string& key, double value) { set(key, format_g9(value)); }
};

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  size_t e = s.find_last_not_of(" \t\r\n");
  return (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
}

// Parses the key/value section of a file. Stops at a line equal to
// `stop_at` (if non-empty) and reports where it stopped.
inline KeyValueFile parse_keyvalue_lines(const std::vector<std::string>& lines,
                                         const std::string& stop_at = "",
                                         size_t* stopped_line = nullptr) {
  KeyValueFile kv;
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    if (!stop_at.empty() && line == stop_at) {
      if (stopped_line) *stopped_line = i;
      return kv;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("line " + std::to_string(i + 1) + ": expected 'key = value', got '" + line + "'");
    kv.items.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (stopped_line) *stopped_line = lines.size();
  return kv;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline KeyValueFile read_keyvalue(const std::string& path) {
  return parse_keyvalue_lines(read_lines(path));
}

}  // namespace raceline

#endif  // RACELINE_CSV_HPP_
