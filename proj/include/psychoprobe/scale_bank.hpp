#pragma once

// Questionnaire definitions (items, subscales, reverse keys, response range)
// and per-persona subscale scoring.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace psychoprobe {

struct ResponseRange {
  int low = 1;
  int high = 5;

  bool contains(int value) const noexcept { return value >= low && value <= high; }
  int width() const noexcept { return high - low + 1; }
};

struct Item {
  int index = 0;  // 1-based, contiguous within the instrument
  std::string statement;
  std::string subscale_id;
  bool reverse_keyed = false;
};

struct Subscale {
  std::string id;
  std::string name;
  std::vector<int> item_indices;  // filled from the item list, definition order
};

struct Instrument {
  std::string id;
  std::string title;
  ResponseRange range;
  std::vector<std::string> anchors;  // one label per scale point, low to high
  std::vector<Subscale> subscales;
  std::vector<Item> items;

  const Item& item(int index) const;
  const Subscale& subscale(std::string_view subscale_id) const;
  bool has_item(int index) const noexcept {
    return index >= 1 && index <= static_cast<int>(items.size());
  }
};

// Parses and validates one instrument document. Validation collects every
// violation before throwing; the error code is that of the first violation.
Instrument parse_instrument(std::string_view json_text);
Instrument load_instrument(const std::filesystem::path& path);

// Loads every *.json file in `dir`, ordered by file name.
std::vector<Instrument> load_instrument_dir(const std::filesystem::path& dir);

// low + high - value. Throws OutOfRange when value lies outside the range.
int reverse_key(int value, ResponseRange range);

struct MissingPolicy {
  // Minimum fraction of a subscale's items that must be present for a score.
  double min_fraction = 1.0;
};

struct SubscaleScore {
  std::string persona_id;
  std::string subscale_id;
  std::optional<double> score;  // mean of keyed values; empty when missing
  int n_items_used = 0;
  int n_missing = 0;
  bool all_missing = false;
};

// `row` holds the persona's raw responses to every item of `instrument`, in
// item order (row[i] is item i + 1). Reverse-keyed items are keyed first.
SubscaleScore score_subscale(std::string_view persona_id,
                             std::span<const std::optional<int>> row,
                             const Instrument& instrument,
                             std::string_view subscale_id,
                             const MissingPolicy& policy = {});

}  // namespace psychoprobe
