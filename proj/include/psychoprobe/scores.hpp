#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "psychoprobe/psychometrics/data_table.hpp"
#include "psychoprobe/response_parser.hpp"
#include "psychoprobe/scale_bank.hpp"

namespace psychoprobe {

struct ScoreRow {
  std::string instrument_id;
  SubscaleScore score;
};

// Long format: one row per persona x subscale.
struct ScoreTable {
  std::string run_id;
  std::vector<ScoreRow> rows;
};

// "BFI:E"
std::string subscale_key(std::string_view instrument_id, std::string_view subscale_id);

// Scores every subscale of every instrument for every matrix row.
ScoreTable score_matrix(const ResponseMatrix& matrix, const std::vector<Instrument>& instruments,
                        const MissingPolicy& policy = {});

void write_scores_csv(std::ostream& out, const ScoreTable& table);
ScoreTable read_scores_csv(std::istream& in);

// Persona x subscale table, columns keyed "INSTRUMENT:SUBSCALE", rows in
// first-appearance order; missing scores are NaN.
DataTable scores_wide(const ScoreTable& table);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace psychoprobe
