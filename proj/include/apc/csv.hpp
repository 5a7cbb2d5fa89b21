#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace apc::csv {

struct Row {
  std::size_t line = 0;  // 1-based line in the source, header is line 1
  std::vector<std::string> fields;
};

class Table {
 public:
  Table(std::string source, std::vector<std::string> header, std::vector<Row> rows);

  const std::string& source() const { return source_; }
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<Row>& rows() const { return rows_; }

  // Column index by name; throws Ingest if absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;

  const std::string& field(const Row& row, std::size_t column) const;
  double number(const Row& row, std::size_t column) const;
  long long integer(const Row& row, std::size_t column) const;

 private:
  std::string where(const Row& row) const;

  std::string source_;
  std::vector<std::string> header_;
  std::vector<Row> rows_;
};

// Parses RFC 4180-style CSV: comma separated, optional double quotes, blank
// lines skipped. Every `required` column must appear in the header.
Table parse(std::istream& in, std::string source,
            std::initializer_list<std::string_view> required = {});
Table read_file(const std::filesystem::path& path,
                std::initializer_list<std::string_view> required = {});

std::string escape(std::string_view field);
// Shortest text that parses back to the same double.
std::string format_double(double value);
// Fixed-point text, e.g. for human-facing columns.
std::string format_fixed(double value, int digits);

// Writes `content` to `path`, replacing it; throws Io on failure.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace apc::csv
