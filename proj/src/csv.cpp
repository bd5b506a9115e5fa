#include "psychoprobe/csv.hpp"

#include <fstream>

#include "psychoprobe/error.hpp"

namespace psychoprobe::csv {

std::optional<std::size_t> Document::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

std::vector<Row> read_rows(std::istream& in, bool skip_comments,
                           std::map<std::string, std::string>* meta) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool in_quotes = false;
  bool at_record_start = true;
  bool field_started = false;
  char c = 0;

  auto end_record = [&] {
    row.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(row));
    row.clear();
    at_record_start = true;
    field_started = false;
  };

  while (in.get(c)) {
    if (at_record_start && !in_quotes) {
      if (c == '\r') continue;
      if (c == '\n') continue;  // blank line
      if (skip_comments && c == '#') {
        std::string line;
        std::getline(in, line);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (meta) {
          std::size_t start = line.find_first_not_of(' ');
          std::size_t eq = line.find('=');
          if (start != std::string::npos && eq != std::string::npos && eq > start) {
            (*meta)[line.substr(start, eq - start)] = line.substr(eq + 1);
          }
        }
        continue;
      }
      at_record_start = false;
    }
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      // swallowed; '\n' ends the record
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) {
    throw Error(ErrorCode::kMalformedFile, "unterminated quoted CSV field");
  }
  if (!at_record_start) end_record();
  return rows;
}

Document read_document(std::istream& in) {
  Document doc;
  auto rows = read_rows(in, true, &doc.meta);
  if (rows.empty()) throw Error(ErrorCode::kMalformedFile, "CSV has no header row");
  doc.header = std::move(rows.front());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != doc.header.size()) {
      throw Error(ErrorCode::kMalformedFile,
                  "CSV record " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                      " fields; header has " + std::to_string(doc.header.size()));
    }
    doc.rows.push_back(std::move(rows[i]));
  }
  return doc;
}

Document read_document_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path);
  try {
    return read_document(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << quote(row[i]);
  }
  out << '\n';
}

}  // namespace psychoprobe::csv
