#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ptab/error.hpp"

namespace ptab::csv {

struct Record {
  std::vector<std::string> cells;
  std::size_t line = 0;  // 1-based line on which the record starts
};

/// Streaming RFC 4180 reader: comma delimiter, double-quote escaping, quoted
/// fields may span lines. CRLF and LF line endings are both accepted.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::optional<Record> next() {
    Record rec;
    std::string cell;
    bool in_quotes = false;
    bool any = false;
    bool quoted_cell = false;
    rec.line = line_;
    int ch;
    while ((ch = in_.get()) != std::char_traits<char>::eof()) {
      any = true;
      const char c = static_cast<char>(ch);
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            cell.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          cell.push_back(c);
        }
        continue;
      }
      if (c == '"' && cell.empty() && !quoted_cell) {
        in_quotes = true;
        quoted_cell = true;
      } else if (c == ',') {
        rec.cells.push_back(std::move(cell));
        cell.clear();
        quoted_cell = false;
      } else if (c == '\r' && in_.peek() == '\n') {
        // swallowed; the '\n' ends the record
      } else if (c == '\n') {
        ++line_;
        rec.cells.push_back(std::move(cell));
        return rec;
      } else {
        cell.push_back(c);
      }
    }
    if (in_quotes) {
      throw FormatError("unterminated quoted field starting on line " +
                        std::to_string(rec.line));
    }
    if (!any) return std::nullopt;
    rec.cells.push_back(std::move(cell));
    ++line_;
    return rec;
  }

 private:
  std::istream& in_;
  std::size_t line_ = 1;
};

inline std::string escape(std::string_view cell) {
  const bool needs = cell.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << escape(cells[i]);
  }
  out << '\n';
}

}  // namespace ptab::csv
