#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anchors/errors.hpp"

namespace anchors {

// RFC-4180 reader: quoted fields may contain commas, doubled quotes and
// newlines. Returns one vector of cells per record, header included.
inline std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  char ch;
  while (in.get(ch)) {
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty() || field_started) {
          throw DataError("csv: line " + std::to_string(line) +
                          ": quote inside unquoted field");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(ch);
        break;
    }
  }
  if (in_quotes) {
    throw DataError("csv: line " + std::to_string(line) +
                    ": unterminated quoted field");
  }
  if (!field.empty() || field_started || !record.empty()) end_record();

  if (!records.empty()) {
    const std::size_t width = records.front().size();
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (records[i].size() != width) {
        throw DataError("csv: row " + std::to_string(i + 1) + " has " +
                        std::to_string(records[i].size()) + " cells, expected " +
                        std::to_string(width));
      }
    }
  }
  return records;
}

inline std::vector<std::vector<std::string>> read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open csv file: " + path);
  return read_csv(in);
}

// Quotes a cell only when RFC-4180 requires it.
inline std::string csv_escape(const std::string& cell) {
  bool needs_quotes = cell.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace anchors
