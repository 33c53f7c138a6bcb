#pragma once

// Small RFC-4180 style CSV reader: comma separated, double-quote quoting
// with "" escapes, quoted fields may span lines, lone \r before \n is
// dropped. Returns raw string cells; typing and arity checks belong to the
// caller, which knows the schema.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"

namespace catsg {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false, row_started = false;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    records.push_back(std::move(row));
    row.clear();
    row_started = false;
  };

  for (size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        quoted = true;
        field_started = row_started = true;
        break;
      case ',':
        end_field();
        row_started = true;
        break;
      case '\n':
        if (row_started || field_started) end_row();
        break;
      case '\r':
        break;  // handled by the following \n (or ignored at EOF)
      default:
        field += ch;
        field_started = row_started = true;
        break;
    }
  }
  CATSG_CHECK(!quoted, DataError, "csv: unterminated quoted field");
  if (row_started || field_started) end_row();

  CsvTable t;
  if (records.empty()) return t;
  t.header = std::move(records.front());
  t.rows.assign(std::make_move_iterator(records.begin() + 1),
                std::make_move_iterator(records.end()));
  return t;
}

inline CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CATSG_CHECK(in.good(), IoError, "csv: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace catsg
