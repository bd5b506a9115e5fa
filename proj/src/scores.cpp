#include "psychoprobe/scores.hpp"

#include <charconv>
#include <istream>
#include <map>
#include <ostream>

#include "psychoprobe/csv.hpp"
#include "psychoprobe/error.hpp"

namespace psychoprobe {

std::string subscale_key(std::string_view instrument_id, std::string_view subscale_id) {
  return std::string(instrument_id) + ":" + std::string(subscale_id);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ScoreTable score_matrix(const ResponseMatrix& matrix, const std::vector<Instrument>& instruments,
                        const MissingPolicy& policy) {
  ScoreTable out;
  out.run_id = matrix.run_id;
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    for (const auto& inst : instruments) {
      const auto row = matrix.instrument_row(r, inst);
      for (const auto& sub : inst.subscales) {
        out.rows.push_back(
            {inst.id, score_subscale(matrix.persona_ids[r], row, inst, sub.id, policy)});
      }
    }
  }
  return out;
}

void write_scores_csv(std::ostream& out, const ScoreTable& table) {
  out << "# run_id=" << table.run_id << "\n";
  csv::write_row(out, {"persona_id", "instrument_id", "subscale_id", "score", "n_items_used",
                       "n_missing"});
  for (const auto& row : table.rows) {
    const auto& s = row.score;
    csv::write_row(out, {s.persona_id, row.instrument_id, s.subscale_id,
                         s.score ? format_double(*s.score) : "", std::to_string(s.n_items_used),
                         std::to_string(s.n_missing)});
  }
}

ScoreTable read_scores_csv(std::istream& in) {
  const csv::Document doc = csv::read_document(in);
  static const std::vector<std::string> kHeader = {"persona_id",  "instrument_id",
                                                   "subscale_id", "score",
                                                   "n_items_used", "n_missing"};
  if (doc.header != kHeader) throw Error(ErrorCode::kSchemaMismatch, "unexpected score CSV header");
  ScoreTable out;
  if (auto it = doc.meta.find("run_id"); it != doc.meta.end()) out.run_id = it->second;
  std::size_t line = 1;
  for (const auto& r : doc.rows) {
    ++line;
    if (r.size() != kHeader.size()) {
      throw Error(ErrorCode::kMalformedFile, "score row " + std::to_string(line) + " has " +
                                                 std::to_string(r.size()) + " fields");
    }
    ScoreRow row;
    row.instrument_id = r[1];
    row.score.persona_id = r[0];
    row.score.subscale_id = r[2];
    try {
      if (!r[3].empty()) row.score.score = std::stod(r[3]);
      row.score.n_items_used = std::stoi(r[4]);
      row.score.n_missing = std::stoi(r[5]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kMalformedFile, "unparsable number on score row " + std::to_string(line));
    }
    row.score.all_missing = row.score.n_items_used == 0;
    out.rows.push_back(std::move(row));
  }
  return out;
}

DataTable scores_wide(const ScoreTable& table) {
  std::map<std::string, std::size_t> row_of, col_of;
  DataTable out;
  for (const auto& row : table.rows) {
    if (row_of.emplace(row.score.persona_id, out.row_ids.size()).second) {
      out.row_ids.push_back(row.score.persona_id);
    }
    const std::string key = subscale_key(row.instrument_id, row.score.subscale_id);
    if (col_of.emplace(key, out.labels.size()).second) out.labels.push_back(key);
  }
  out.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(out.row_ids.size()),
                                         static_cast<Eigen::Index>(out.labels.size()), kMissing);
  for (const auto& row : table.rows) {
    if (!row.score.score) continue;
    const auto r = static_cast<Eigen::Index>(row_of.at(row.score.persona_id));
    const auto c =
        static_cast<Eigen::Index>(col_of.at(subscale_key(row.instrument_id, row.score.subscale_id)));
    out.values(r, c) = *row.score.score;
  }
  return out;
}

}  // namespace psychoprobe
