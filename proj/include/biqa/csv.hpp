#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace biqa::csv {

using Row = std::vector<std::string>;

/// Parsed table with a header row. Quoted fields follow RFC 4180.
struct Table {
  Row header;
  std::vector<Row> rows;

  /// Column index by name, or -1.
  int column(std::string_view name) const;
  /// Column index by name; raises a corrupt-data error when absent.
  int require(std::string_view name) const;
};

Table parse(std::string_view text);
Table read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string format_row(const Row& row);

/// Shortest text that round-trips a double.
std::string format_double(double v);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace biqa::csv
