#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace manifool {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

/// Accumulates CSV rows in memory; `write_atomic` publishes them in one go.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes to a temporary sibling, then renames over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace manifool
