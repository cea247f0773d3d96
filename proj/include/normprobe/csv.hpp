// SPDX-License-Identifier: Apache-2.0
//
// Comma-separated tables with one header row. Fields are never quoted, so
// they must not contain commas, quotes or line breaks.
#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace normprobe {

inline constexpr int kCsvSchemaVersion = 1;

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws CsvError if the column is absent.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
  double number(std::size_t row, std::string_view name) const { return number(row, column(name)); }

  void add_row(std::vector<std::string> row);
};

std::string to_csv(const CsvTable& table);
/// Throws CsvError on ragged rows or an empty header.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Shortest text that parses back to the same value; "nan", "inf", "-inf" otherwise.
std::string csv_number(double v);
std::string csv_number(float v);
/// Replaces characters a field cannot hold.
std::string csv_field(std::string_view text);

}  // namespace normprobe
