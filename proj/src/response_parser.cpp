#include "psychoprobe/response_parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "psychoprobe/csv.hpp"
#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

const Instrument& find_instrument(const std::vector<Instrument>& instruments,
                                  std::string_view id) {
  for (const auto& inst : instruments) {
    if (inst.id == id) return inst;
  }
  throw Error(ErrorCode::kUnknownItem, "unknown instrument '" + std::string(id) + "'");
}

std::string group_key(const Instrument& inst, int item_index, GroupBy group_by) {
  if (group_by == GroupBy::kItem) return ItemRef{inst.id, item_index}.label();
  return inst.id + ":" + inst.item(item_index).subscale_id;
}

}  // namespace

std::string_view disposition_name(Disposition d) {
  switch (d) {
    case Disposition::kParsed: return "parsed";
    case Disposition::kNoDigit: return "no-digit";
    case Disposition::kOutOfRange: return "out-of-range";
    case Disposition::kFailedJob: return "failed-job";
  }
  return "unknown";
}

ParsedResponse parse_response(std::string_view text, ResponseRange range,
                              const ParseOptions& options) {
  ParsedResponse out;
  const auto first = std::find_if_not(text.begin(), text.end(), is_space);
  out.first_token_is_digit = first != text.end() && is_digit(*first);

  bool any_digit = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!is_digit(text[i])) continue;
    const int value = text[i] - '0';
    if (!options.strict) {
      out.first_digit_position = i;
      if (range.contains(value)) {
        out.value = value;
        out.disposition = Disposition::kParsed;
      } else {
        out.disposition = Disposition::kOutOfRange;
      }
      return out;
    }
    any_digit = true;
    const bool lone = (i == 0 || !is_digit(text[i - 1])) &&
                      (i + 1 == text.size() || !is_digit(text[i + 1]));
    if (lone && range.contains(value)) {
      out.first_digit_position = i;
      out.value = value;
      out.disposition = Disposition::kParsed;
      return out;
    }
  }
  out.disposition = any_digit ? Disposition::kOutOfRange : Disposition::kNoDigit;
  return out;
}

ParsedResponse parse_raw_response(const RawResponse& raw, ResponseRange range,
                                  const ParseOptions& options) {
  if (!raw.ok) {
    ParsedResponse out;
    out.job_id = raw.job_id;
    out.disposition = Disposition::kFailedJob;
    return out;
  }
  ParsedResponse out = parse_response(raw.text, range, options);
  out.job_id = raw.job_id;
  return out;
}

void DispositionCounts::add(const ParsedResponse& p) {
  switch (p.disposition) {
    case Disposition::kParsed: ++parsed; break;
    case Disposition::kNoDigit: ++no_digit; break;
    case Disposition::kOutOfRange: ++out_of_range; break;
    case Disposition::kFailedJob: ++failed_job; break;
  }
  if (p.first_token_is_digit) ++first_token_digit;
}

std::string ItemRef::label() const { return instrument_id + "_" + std::to_string(item_index); }

ItemRef parse_item_label(std::string_view label) {
  const auto us = label.rfind('_');
  int index = 0;
  if (us == std::string_view::npos || us == 0 ||
      std::from_chars(label.data() + us + 1, label.data() + label.size(), index).ptr !=
          label.data() + label.size()) {
    throw Error(ErrorCode::kMalformedFile, "bad item column label '" + std::string(label) + "'");
  }
  return {std::string(label.substr(0, us)), index};
}

std::optional<std::size_t> ResponseMatrix::column_index(const ItemRef& ref) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == ref) return c;
  }
  return std::nullopt;
}

std::vector<std::optional<int>> ResponseMatrix::instrument_row(std::size_t r,
                                                               const Instrument& instrument) const {
  std::vector<std::optional<int>> row(instrument.items.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto& ref = columns[c];
    if (ref.instrument_id == instrument.id && instrument.has_item(ref.item_index)) {
      row[static_cast<std::size_t>(ref.item_index - 1)] = at(r, c);
    }
  }
  return row;
}

ResponseMatrix build_response_matrix(const std::vector<ParsedResponse>& parsed,
                                     const std::vector<PromptJob>& batch,
                                     std::string_view run_id) {
  std::unordered_map<std::string, const ParsedResponse*> by_job;
  by_job.reserve(parsed.size());
  for (const auto& p : parsed) {
    if (!by_job.emplace(p.job_id, &p).second) {
      throw Error(ErrorCode::kJobMismatch, "duplicate parsed job id " + p.job_id);
    }
  }

  ResponseMatrix m;
  m.run_id = std::string(run_id);
  std::map<std::string, std::size_t> row_of;
  std::map<ItemRef, std::size_t> col_of;
  for (const auto& job : batch) {
    if (row_of.emplace(job.persona_id, m.persona_ids.size()).second) {
      m.persona_ids.push_back(job.persona_id);
    }
    ItemRef ref{job.instrument_id, job.item_index};
    if (col_of.emplace(ref, m.columns.size()).second) m.columns.push_back(ref);
  }
  m.cells.assign(m.rows() * m.cols(), std::nullopt);
  std::vector<char> filled(m.cells.size(), 0);

  std::set<std::string> batch_ids;
  for (const auto& job : batch) {
    if (!batch_ids.insert(job.job_id).second) {
      throw Error(ErrorCode::kJobMismatch, "duplicate batch job id " + job.job_id);
    }
    auto it = by_job.find(job.job_id);
    if (it == by_job.end()) {
      throw Error(ErrorCode::kJobMismatch, "no parsed response for job " + job.job_id);
    }
    const std::size_t idx = row_of[job.persona_id] * m.cols() +
                            col_of[ItemRef{job.instrument_id, job.item_index}];
    if (filled[idx]) {
      throw Error(ErrorCode::kJobMismatch, "two jobs map to persona " + job.persona_id +
                                               ", item " +
                                               ItemRef{job.instrument_id, job.item_index}.label());
    }
    filled[idx] = 1;
    m.counts.add(*it->second);
    if (it->second->disposition == Disposition::kParsed) m.cells[idx] = it->second->value;
  }
  if (by_job.size() != batch_ids.size()) {
    throw Error(ErrorCode::kJobMismatch, std::to_string(by_job.size() - batch_ids.size()) +
                                             " parsed responses have no batch job");
  }
  return m;
}

void write_matrix_csv(std::ostream& out, const ResponseMatrix& matrix) {
  out << "# run_id=" << matrix.run_id << '\n';
  csv::Row header{"persona_id"};
  for (const auto& c : matrix.columns) header.push_back(c.label());
  csv::write_row(out, header);
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    csv::Row row{matrix.persona_ids[r]};
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      const auto& v = matrix.at(r, c);
      row.push_back(v ? std::to_string(*v) : std::string());
    }
    csv::write_row(out, row);
  }
}

ResponseMatrix read_matrix_csv(std::istream& in) {
  const csv::Document doc = csv::read_document(in);
  if (doc.header.empty() || doc.header[0] != "persona_id") {
    throw Error(ErrorCode::kMalformedFile, "matrix CSV must start with a persona_id column");
  }
  ResponseMatrix m;
  if (auto it = doc.meta.find("run_id"); it != doc.meta.end()) m.run_id = it->second;
  for (std::size_t c = 1; c < doc.header.size(); ++c) {
    m.columns.push_back(parse_item_label(doc.header[c]));
  }
  std::set<std::string> seen;
  for (const auto& row : doc.rows) {
    if (!seen.insert(row[0]).second) {
      throw Error(ErrorCode::kMalformedFile, "duplicate persona row " + row[0]);
    }
    m.persona_ids.push_back(row[0]);
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c].empty()) {
        m.cells.emplace_back();
        continue;
      }
      int v = 0;
      auto [ptr, ec] = std::from_chars(row[c].data(), row[c].data() + row[c].size(), v);
      if (ec != std::errc() || ptr != row[c].data() + row[c].size()) {
        throw Error(ErrorCode::kMalformedFile, "non-integer cell '" + row[c] + "'");
      }
      m.cells.emplace_back(v);
    }
  }
  return m;
}

FrequencyTable frequency_table(const std::vector<FrequencyObservation>& observations,
                               bool split_by_first_token) {
  if (observations.empty()) throw Error(ErrorCode::kEmptyInput, "no responses to tabulate");

  struct Tally {
    ResponseRange range;
    std::map<std::string, std::map<int, std::size_t>> counts;  // split -> value -> n
  };
  std::vector<std::string> order;
  std::map<std::string, Tally> groups;
  for (const auto& o : observations) {
    auto [it, inserted] = groups.try_emplace(o.group);
    if (inserted) {
      order.push_back(o.group);
      it->second.range = o.range;
    }
    Tally& t = it->second;
    if (!t.range.contains(o.value)) {
      throw Error(ErrorCode::kOutOfRange, o.group + " value " + std::to_string(o.value));
    }
    ++t.counts["all"][o.value];
    if (split_by_first_token) {
      if (!o.first_token_is_digit) {
        throw Error(ErrorCode::kInvalidInput,
                    "first-token split requested but observation lacks digit flag");
      }
      ++t.counts[*o.first_token_is_digit ? "digit" : "non-digit"][o.value];
    }
  }

  FrequencyTable table;
  std::vector<std::string> splits{"all"};
  if (split_by_first_token) {
    splits.push_back("digit");
    splits.push_back("non-digit");
  }
  for (const auto& g : order) {
    const Tally& t = groups.at(g);
    for (const auto& split : splits) {
      auto it = t.counts.find(split);
      std::size_t total = 0;
      if (it != t.counts.end()) {
        for (const auto& [v, n] : it->second) total += n;
      }
      for (int v = t.range.low; v <= t.range.high; ++v) {
        FrequencyRow row;
        row.group = g;
        row.split = split;
        row.value = v;
        if (it != t.counts.end()) {
          auto c = it->second.find(v);
          row.count = c == it->second.end() ? 0 : c->second;
        }
        row.total = total;
        row.frequency = total ? static_cast<double>(row.count) / static_cast<double>(total) : 0.0;
        table.rows.push_back(row);
      }
    }
  }
  return table;
}

std::vector<FrequencyObservation> observations_from_matrix(
    const ResponseMatrix& matrix, const std::vector<Instrument>& instruments, GroupBy group_by) {
  std::vector<FrequencyObservation> out;
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    const Instrument& inst = find_instrument(instruments, matrix.columns[c].instrument_id);
    const std::string key = group_key(inst, matrix.columns[c].item_index, group_by);
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
      if (const auto& v = matrix.at(r, c)) out.push_back({key, *v, inst.range, std::nullopt});
    }
  }
  return out;
}

std::vector<FrequencyObservation> observations_from_parsed(
    const std::vector<ParsedResponse>& parsed, const std::vector<PromptJob>& batch,
    const std::vector<Instrument>& instruments, GroupBy group_by) {
  std::unordered_map<std::string, const PromptJob*> jobs;
  for (const auto& j : batch) jobs.emplace(j.job_id, &j);
  std::vector<FrequencyObservation> out;
  for (const auto& p : parsed) {
    if (p.disposition != Disposition::kParsed) continue;
    auto it = jobs.find(p.job_id);
    if (it == jobs.end()) throw Error(ErrorCode::kJobMismatch, "unknown job " + p.job_id);
    const Instrument& inst = find_instrument(instruments, it->second->instrument_id);
    out.push_back({group_key(inst, it->second->item_index, group_by), *p.value, inst.range,
                   p.first_token_is_digit});
  }
  return out;
}

}  // namespace psychoprobe
