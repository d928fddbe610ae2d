#include "momentfit/csvio.hpp"

#include <cstdio>
#include <fstream>

namespace momentfit::csvio {

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int Table::require_column(const std::string& name) const {
  const int idx = column(name);
  if (idx < 0) throw InvalidInputError("column '" + name + "' not found in CSV header");
  return idx;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, long line_number) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted)
    throw InvalidInputError("unterminated quote at line " + std::to_string(line_number));
  fields.push_back(std::move(field));
  return fields;
}

}  // namespace

Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open CSV file " + path.string());
  Table table;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line_number == 1) {
      table.header = split_csv_line(line, line_number);
      continue;
    }
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    auto fields = split_csv_line(line, line_number);
    if (fields.size() != table.header.size())
      throw InvalidInputError("line " + std::to_string(line_number) + ": expected " +
                              std::to_string(table.header.size()) + " fields, got " +
                              std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw InvalidInputError("CSV file " + path.string() + " has no header");
  return table;
}

std::string format_full(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

void write_lines(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

}  // namespace momentfit::csvio
