#include "psychoprobe/scale_bank.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;

struct Violations {
  std::vector<std::pair<ErrorCode, std::string>> list;

  void add(ErrorCode code, std::string message) {
    list.emplace_back(code, std::move(message));
  }

  void throw_if_any(std::string_view context) const {
    if (list.empty()) return;
    std::ostringstream os;
    os << context << ": " << list.size() << " violation(s)";
    for (const auto& [code, msg] : list) {
      os << "\n  - " << error_code_name(code) << ": " << msg;
    }
    throw Error(list.front().first, os.str());
  }
};

template <typename T>
std::optional<T> get_field(const json& j, const char* key, Violations& v,
                           std::string_view where) {
  if (!j.is_object() || !j.contains(key)) {
    v.add(ErrorCode::kMalformedFile, std::string(where) + " is missing field '" + key + "'");
    return std::nullopt;
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    v.add(ErrorCode::kMalformedFile, std::string(where) + " field '" + key + "' has the wrong type");
    return std::nullopt;
  }
}

}  // namespace

const Item& Instrument::item(int index) const {
  if (!has_item(index)) {
    throw Error(ErrorCode::kUnknownItem,
                id + " has no item " + std::to_string(index));
  }
  return items[static_cast<std::size_t>(index - 1)];
}

const Subscale& Instrument::subscale(std::string_view subscale_id) const {
  for (const auto& s : subscales) {
    if (s.id == subscale_id) return s;
  }
  throw Error(ErrorCode::kEmptySubscale,
              id + " has no subscale '" + std::string(subscale_id) + "'");
}

Instrument parse_instrument(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorCode::kMalformedFile, "instrument document must be a JSON object");
  }

  Violations v;
  Instrument inst;
  inst.id = get_field<std::string>(doc, "id", v, "instrument").value_or("");
  inst.title = get_field<std::string>(doc, "title", v, "instrument").value_or("");
  if (inst.id.empty()) v.add(ErrorCode::kMalformedFile, "instrument id is empty");

  if (auto range = get_field<json>(doc, "response_range", v, "instrument")) {
    auto low = get_field<int>(*range, "low", v, "response_range");
    auto high = get_field<int>(*range, "high", v, "response_range");
    if (low && high) {
      inst.range = {*low, *high};
      if (*low >= *high) {
        v.add(ErrorCode::kRangeInvalid, "response_range low (" + std::to_string(*low) +
                                            ") must be below high (" + std::to_string(*high) + ")");
      }
    }
  }
  inst.anchors = get_field<std::vector<std::string>>(doc, "anchors", v, "instrument")
                     .value_or(std::vector<std::string>{});
  if (inst.range.low < inst.range.high &&
      static_cast<int>(inst.anchors.size()) != inst.range.width()) {
    v.add(ErrorCode::kRangeInvalid, "expected " + std::to_string(inst.range.width()) +
                                        " anchor labels, found " +
                                        std::to_string(inst.anchors.size()));
  }

  if (auto subs = get_field<json>(doc, "subscales", v, "instrument")) {
    if (!subs->is_array()) {
      v.add(ErrorCode::kMalformedFile, "subscales must be an array");
    } else {
      std::set<std::string> seen;
      for (const auto& s : *subs) {
        Subscale sub;
        sub.id = get_field<std::string>(s, "id", v, "subscale").value_or("");
        sub.name = get_field<std::string>(s, "name", v, "subscale").value_or(sub.id);
        if (!seen.insert(sub.id).second) {
          v.add(ErrorCode::kMalformedFile, "duplicate subscale id '" + sub.id + "'");
        }
        inst.subscales.push_back(std::move(sub));
      }
    }
  }

  if (auto items = get_field<json>(doc, "items", v, "instrument")) {
    if (!items->is_array()) {
      v.add(ErrorCode::kMalformedFile, "items must be an array");
    } else {
      std::map<int, Item> by_index;
      for (const auto& it : *items) {
        Item item;
        auto index = get_field<int>(it, "index", v, "item");
        item.statement = get_field<std::string>(it, "statement", v, "item").value_or("");
        item.subscale_id = get_field<std::string>(it, "subscale", v, "item").value_or("");
        item.reverse_keyed = it.is_object() && it.value("reverse", false);
        if (!index) continue;
        item.index = *index;
        const std::string where = "item " + std::to_string(item.index);
        if (item.statement.empty()) {
          v.add(ErrorCode::kMalformedFile, where + " has an empty statement");
        }
        auto sub = std::find_if(inst.subscales.begin(), inst.subscales.end(),
                                [&](const Subscale& s) { return s.id == item.subscale_id; });
        if (sub == inst.subscales.end()) {
          v.add(ErrorCode::kEmptySubscale,
                where + " references unknown subscale '" + item.subscale_id + "'");
        }
        if (!by_index.emplace(item.index, item).second) {
          v.add(ErrorCode::kDuplicateItemIndex, "item index " + std::to_string(item.index) +
                                                    " appears more than once");
        }
      }
      int expected = 1;
      for (auto& [index, item] : by_index) {
        if (index != expected) {
          v.add(ErrorCode::kMalformedFile, "item indices must be contiguous from 1; expected " +
                                               std::to_string(expected) + ", found " +
                                               std::to_string(index));
          expected = index;
        }
        ++expected;
        inst.items.push_back(item);
      }
    }
  }

  for (auto& sub : inst.subscales) {
    for (const auto& item : inst.items) {
      if (item.subscale_id == sub.id) sub.item_indices.push_back(item.index);
    }
    if (sub.item_indices.size() < 2) {
      v.add(ErrorCode::kEmptySubscale, "subscale '" + sub.id + "' has " +
                                           std::to_string(sub.item_indices.size()) +
                                           " item(s); at least 2 required");
    }
  }
  if (inst.subscales.empty()) v.add(ErrorCode::kEmptySubscale, "instrument has no subscales");

  v.throw_if_any("instrument '" + inst.id + "'");
  return inst;
}

Instrument load_instrument(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_instrument(buf.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<Instrument> load_instrument_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::kMalformedFile, dir.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<Instrument> out;
  std::set<std::string> ids;
  for (const auto& f : files) {
    out.push_back(load_instrument(f));
    if (!ids.insert(out.back().id).second) {
      throw Error(ErrorCode::kMalformedFile, "duplicate instrument id " + out.back().id);
    }
  }
  if (out.empty()) {
    throw Error(ErrorCode::kMalformedFile, "no instrument definitions in " + dir.string());
  }
  return out;
}

int reverse_key(int value, ResponseRange range) {
  if (!range.contains(value)) {
    throw Error(ErrorCode::kOutOfRange, std::to_string(value) + " outside [" +
                                            std::to_string(range.low) + ", " +
                                            std::to_string(range.high) + "]");
  }
  return range.low + range.high - value;
}

SubscaleScore score_subscale(std::string_view persona_id,
                             std::span<const std::optional<int>> row,
                             const Instrument& instrument, std::string_view subscale_id,
                             const MissingPolicy& policy) {
  if (row.size() != instrument.items.size()) {
    throw Error(ErrorCode::kInvalidInput,
                "row has " + std::to_string(row.size()) + " values; " + instrument.id +
                    " has " + std::to_string(instrument.items.size()) + " items");
  }
  const Subscale& sub = instrument.subscale(subscale_id);
  SubscaleScore out;
  out.persona_id = std::string(persona_id);
  out.subscale_id = sub.id;

  double sum = 0.0;
  for (int index : sub.item_indices) {
    const auto& cell = row[static_cast<std::size_t>(index - 1)];
    if (!cell) {
      ++out.n_missing;
      continue;
    }
    if (!instrument.range.contains(*cell)) {
      throw Error(ErrorCode::kOutOfRange, instrument.id + " item " + std::to_string(index) +
                                              " value " + std::to_string(*cell));
    }
    const Item& item = instrument.item(index);
    sum += item.reverse_keyed ? reverse_key(*cell, instrument.range) : *cell;
    ++out.n_items_used;
  }
  const int total = out.n_items_used + out.n_missing;
  out.all_missing = out.n_items_used == 0;
  const double present = static_cast<double>(out.n_items_used) / total;
  if (!out.all_missing && present + 1e-12 >= policy.min_fraction) {
    out.score = sum / out.n_items_used;
  }
  return out;
}

}  // namespace psychoprobe
