#pragma once

// Minimal RFC 4180 reader/writer. Lines starting with '#' before a record are
// treated as comments when `skip_comments` is set; they carry run metadata.

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace psychoprobe::csv {

using Row = std::vector<std::string>;

struct Document {
  std::map<std::string, std::string> meta;  // "# key=value" comment lines
  Row header;
  std::vector<Row> rows;

  std::optional<std::size_t> column(const std::string& name) const;
};

std::vector<Row> read_rows(std::istream& in, bool skip_comments,
                           std::map<std::string, std::string>* meta = nullptr);

// First non-comment row is the header. Throws MalformedFile on ragged rows.
Document read_document(std::istream& in);
Document read_document_file(const std::string& path);

std::string quote(const std::string& field);
void write_row(std::ostream& out, const Row& row);

}  // namespace psychoprobe::csv
