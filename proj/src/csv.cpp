#include "apc/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "apc/error.hpp"

namespace apc::csv {

namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
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
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) fail(ErrorCode::Ingest, where + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Table::Table(std::string source, std::vector<std::string> header, std::vector<Row> rows)
    : source_(std::move(source)), header_(std::move(header)), rows_(std::move(rows)) {}

bool Table::has_column(std::string_view name) const {
  for (const auto& h : header_)
    if (h == name) return true;
  return false;
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  fail(ErrorCode::Ingest, source_ + ": missing column '" + std::string(name) + "'");
}

std::string Table::where(const Row& row) const {
  return source_ + ":" + std::to_string(row.line);
}

const std::string& Table::field(const Row& row, std::size_t column) const {
  if (column >= row.fields.size())
    fail(ErrorCode::Ingest, where(row) + ": too few fields");
  return row.fields[column];
}

double Table::number(const Row& row, std::size_t column) const {
  const std::string& text = field(row, column);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value))
    fail(ErrorCode::Ingest, where(row) + ": column '" + header_[column] +
                                "' is not a finite number: '" + text + "'");
  return value;
}

long long Table::integer(const Row& row, std::size_t column) const {
  const std::string& text = field(row, column);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    fail(ErrorCode::Ingest, where(row) + ": column '" + header_[column] +
                                "' is not an integer: '" + text + "'");
  return value;
}

Table parse(std::istream& in, std::string source,
            std::initializer_list<std::string_view> required) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line, source + ":" + std::to_string(line_no));
    for (auto& f : fields) f = trim(std::move(f));
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size())
      fail(ErrorCode::Ingest, source + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, found " +
                                  std::to_string(fields.size()));
    rows.push_back({line_no, std::move(fields)});
  }
  if (header.empty()) fail(ErrorCode::Ingest, source + ": empty file, no header");
  Table table(std::move(source), std::move(header), std::move(rows));
  for (auto name : required) table.column(name);
  return table;
}

Table read_file(const std::filesystem::path& path,
                std::initializer_list<std::string_view> required) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return parse(in, path.string(), required);
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) fail(ErrorCode::Io, "cannot format number");
  return std::string(buf, ptr);
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  const auto [ptr, ec] =
      std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, digits);
  if (ec != std::errc{}) fail(ErrorCode::Io, "cannot format number");
  return std::string(buf, ptr);
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace apc::csv
