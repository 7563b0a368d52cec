#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hai_sbi::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) {
        return c;
      }
    }
    throw std::runtime_error("csv: missing column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    if (!field.empty() && field.back() == '\r') {
      field.pop_back();
    }
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

inline Table read(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("csv: cannot open '" + path + "'");
  }
  Table table;
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("csv: empty file '" + path + "'");
  }
  table.header = split_line(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    auto fields = split_line(line);
    if (fields.size() != table.header.size()) {
      throw std::runtime_error("csv: '" + path + "' line " + std::to_string(line_no) +
                               " has " + std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

inline long long parse_int(std::string_view text, std::string_view what) {
  long long value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw std::runtime_error("csv: bad integer '" + std::string(text) + "' for " +
                             std::string(what));
  }
  return value;
}

inline double parse_double(const std::string& text, std::string_view what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) {
      throw std::invalid_argument(text);
    }
    return value;
  } catch (const std::exception&) {
    throw std::runtime_error("csv: bad number '" + text + "' for " + std::string(what));
  }
}

// Shortest round-trip representation, so files reload bit-exactly.
inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) {
    throw std::runtime_error("csv: cannot format number");
  }
  return std::string(buf, ptr);
}

}  // namespace hai_sbi::csv
