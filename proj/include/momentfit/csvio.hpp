#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "momentfit/errors.hpp"

namespace momentfit::csvio {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  int require_column(const std::string& name) const;
};

// Comma-separated with a required header row; double quotes escape commas
// and embedded quotes. Malformed rows raise InvalidInputError with the line
// number.
Table read_csv(const std::filesystem::path& path);

std::string format_full(double value);  // 17 significant digits, round-trips

void write_lines(const std::filesystem::path& path, const std::string& content);

}  // namespace momentfit::csvio
