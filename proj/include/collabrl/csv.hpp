#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace collabrl {

// Deterministic number formatting for reproducible output files.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// Minimal CSV writer: header row, then comma-delimited rows, UTF-8.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path);
    write_row_strings(header);
    columns_ = header.size();
  }

  void write_row_strings(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

  // Mixed row: strings pass through, doubles are formatted deterministically.
  struct Field {
    std::string text;
    Field(const std::string& s) : text(s) {}
    Field(const char* s) : text(s) {}
    Field(double v) : text(format_double(v)) {}
    Field(int v) : text(std::to_string(v)) {}
    Field(long long v) : text(std::to_string(v)) {}
    Field(std::size_t v) : text(std::to_string(v)) {}
  };

  void write_row(const std::vector<Field>& fields) {
    if (columns_ && fields.size() != columns_)
      throw std::logic_error("csv row width mismatch");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i].text;
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
  std::size_t columns_ = 0;
};

}  // namespace collabrl
