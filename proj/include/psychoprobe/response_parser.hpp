#pragma once

// Free-text completion -> numeric item response, and the personas x items
// response matrix that every statistic consumes.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "psychoprobe/prompt.hpp"
#include "psychoprobe/raw_response.hpp"
#include "psychoprobe/scale_bank.hpp"

namespace psychoprobe {

enum class Disposition { kParsed, kNoDigit, kOutOfRange, kFailedJob };

std::string_view disposition_name(Disposition d);

struct ParsedResponse {
  std::string job_id;
  std::optional<int> value;
  bool first_token_is_digit = false;
  std::optional<std::size_t> first_digit_position;
  Disposition disposition = Disposition::kNoDigit;
};

struct ParseOptions {
  // Strict mode only accepts a digit that is in range and not adjacent to
  // another digit ("10" and "25" are skipped). Off by default.
  bool strict = false;
};

// The first decimal digit anywhere in the text is the response.
ParsedResponse parse_response(std::string_view text, ResponseRange range,
                              const ParseOptions& options = {});

// Failed jobs become kFailedJob; otherwise parse_response on the text.
ParsedResponse parse_raw_response(const RawResponse& raw, ResponseRange range,
                                  const ParseOptions& options = {});

struct DispositionCounts {
  std::size_t parsed = 0;
  std::size_t no_digit = 0;
  std::size_t out_of_range = 0;
  std::size_t failed_job = 0;
  std::size_t first_token_digit = 0;

  std::size_t total() const noexcept { return parsed + no_digit + out_of_range + failed_job; }
  void add(const ParsedResponse& p);
};

struct ItemRef {
  std::string instrument_id;
  int item_index = 0;

  std::string label() const;  // "BFI_12"
  bool operator==(const ItemRef&) const = default;
  auto operator<=>(const ItemRef&) const = default;
};

ItemRef parse_item_label(std::string_view label);

struct ResponseMatrix {
  std::string run_id;
  std::vector<std::string> persona_ids;
  std::vector<ItemRef> columns;
  std::vector<std::optional<int>> cells;  // row-major
  DispositionCounts counts;

  std::size_t rows() const noexcept { return persona_ids.size(); }
  std::size_t cols() const noexcept { return columns.size(); }
  const std::optional<int>& at(std::size_t r, std::size_t c) const {
    return cells[r * columns.size() + c];
  }
  std::optional<int>& at(std::size_t r, std::size_t c) { return cells[r * columns.size() + c]; }
  std::optional<std::size_t> column_index(const ItemRef& ref) const;

  // Raw responses of row `r` to every item of `instrument`, in item order;
  // items without a column are missing.
  std::vector<std::optional<int>> instrument_row(std::size_t r,
                                                 const Instrument& instrument) const;
};

// One row per persona and one column per item, in batch order. Throws
// JobMismatch on duplicate, unknown or uncovered job ids, or when two jobs
// land in the same cell.
ResponseMatrix build_response_matrix(const std::vector<ParsedResponse>& parsed,
                                     const std::vector<PromptJob>& batch,
                                     std::string_view run_id = {});

void write_matrix_csv(std::ostream& out, const ResponseMatrix& matrix);
ResponseMatrix read_matrix_csv(std::istream& in);

enum class GroupBy { kItem, kSubscale };

struct FrequencyObservation {
  std::string group;
  int value = 0;
  ResponseRange range;
  std::optional<bool> first_token_is_digit;
};

struct FrequencyRow {
  std::string group;
  std::string split;  // "all", "digit" or "non-digit"
  int value = 0;
  std::size_t count = 0;
  std::size_t total = 0;  // present responses in (group, split)
  double frequency = 0.0;
};

struct FrequencyTable {
  std::vector<FrequencyRow> rows;
};

// Relative frequency of each response value per group; with `split` on, rows
// are added per first-token class next to the "all" rows.
FrequencyTable frequency_table(const std::vector<FrequencyObservation>& observations,
                               bool split_by_first_token);

std::vector<FrequencyObservation> observations_from_matrix(
    const ResponseMatrix& matrix, const std::vector<Instrument>& instruments, GroupBy group_by);

std::vector<FrequencyObservation> observations_from_parsed(
    const std::vector<ParsedResponse>& parsed, const std::vector<PromptJob>& batch,
    const std::vector<Instrument>& instruments, GroupBy group_by);

}  // namespace psychoprobe
