#include "psychoprobe/persona.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychoprobe/csv.hpp"
#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;

constexpr std::string_view kPlaceholder = "{value}";

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool value_allowed(const FieldTemplate& f, const std::string& value) {
  if (f.kind == FieldTemplate::Kind::kInteger) {
    auto v = parse_int(value);
    return v && *v >= f.min && *v <= f.max;
  }
  if (f.open) return !value.empty();
  return std::find(f.values.begin(), f.values.end(), value) != f.values.end();
}

// Candidate values a sentence could have come from; callers confirm each by
// re-rendering.
std::set<std::string> candidate_values(const FieldTemplate& f, const std::string& sentence) {
  std::set<std::string> out;
  for (const auto& [value, s] : f.sentences) {
    if (s == sentence) out.insert(value);
  }
  const auto pos = f.pattern.find(kPlaceholder);
  const std::string prefix = f.pattern.substr(0, pos);
  const std::string suffix = f.pattern.substr(pos + kPlaceholder.size());
  if (sentence.size() < prefix.size() + suffix.size() ||
      sentence.compare(0, prefix.size(), prefix) != 0 ||
      sentence.compare(sentence.size() - suffix.size(), suffix.size(), suffix) != 0) {
    return out;
  }
  const std::string phrase =
      sentence.substr(prefix.size(), sentence.size() - prefix.size() - suffix.size());
  out.insert(phrase);
  for (const auto& [value, p] : f.phrases) {
    if (p == phrase) out.insert(value);
  }
  return out;
}

}  // namespace

std::string_view persona_kind_name(PersonaKind kind) {
  return kind == PersonaKind::kGeneric ? "generic" : "silicon";
}

std::string PersonaText::text() const {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

std::string FieldTemplate::render(const std::string& value) const {
  if (auto it = sentences.find(value); it != sentences.end()) return it->second;
  std::string phrase = value;
  if (auto it = phrases.find(value); it != phrases.end()) phrase = it->second;
  std::string out = pattern;
  const auto pos = out.find(kPlaceholder);
  if (pos != std::string::npos) out.replace(pos, kPlaceholder.size(), phrase);
  return out;
}

const FieldTemplate* SiliconTemplates::find(std::string_view name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

SiliconTemplates parse_silicon_templates(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("invalid template JSON: ") + e.what());
  }
  SiliconTemplates out;
  try {
    for (const auto& f : doc.at("fields")) {
      FieldTemplate t;
      t.name = f.at("name").get<std::string>();
      t.kind = f.value("kind", std::string("enum")) == "integer" ? FieldTemplate::Kind::kInteger
                                                                 : FieldTemplate::Kind::kEnum;
      t.min = f.value("min", 0);
      t.max = f.value("max", 0);
      t.values = f.value("values", std::vector<std::string>{});
      t.open = f.value("open", false);
      t.optional = f.value("optional", false);
      const std::string enc = f.value("encoding", std::string());
      if (enc.empty()) {
        t.encoding = t.kind == FieldTemplate::Kind::kInteger ? FieldTemplate::Encoding::kNumeric
                     : t.values.size() == 2                  ? FieldTemplate::Encoding::kBinary
                                                             : FieldTemplate::Encoding::kNominal;
      } else if (enc == "numeric") {
        t.encoding = FieldTemplate::Encoding::kNumeric;
      } else if (enc == "ordinal") {
        t.encoding = FieldTemplate::Encoding::kOrdinal;
      } else if (enc == "binary") {
        t.encoding = FieldTemplate::Encoding::kBinary;
      } else if (enc == "nominal") {
        t.encoding = FieldTemplate::Encoding::kNominal;
      } else {
        throw Error(ErrorCode::kMalformedFile, "unknown encoding '" + enc + "' for " + t.name);
      }
      if (f.contains("requires")) {
        t.requires_field = f["requires"].at("field").get<std::string>();
        t.requires_any_of = f["requires"].at("any_of").get<std::vector<std::string>>();
      }
      t.pattern = f.at("pattern").get<std::string>();
      t.phrases = f.value("phrases", std::map<std::string, std::string>{});
      t.sentences = f.value("sentences", std::map<std::string, std::string>{});
      if (std::count(t.pattern.begin(), t.pattern.end(), '{') != 1 ||
          t.pattern.find(kPlaceholder) == std::string::npos) {
        throw Error(ErrorCode::kMalformedFile,
                    "template for '" + t.name + "' must contain exactly one {value}");
      }
      out.fields.push_back(std::move(t));
    }
    out.traits = doc.value("traits", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("template document: ") + e.what());
  }
  return out;
}

SiliconTemplates load_silicon_templates(const std::filesystem::path& path) {
  return parse_silicon_templates(read_file(path));
}

std::string SiliconRecord::persona_id() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "silicon-%06zu", source_row);
  return buf;
}

void validate_record(const SiliconRecord& record, const SiliconTemplates& templates) {
  for (const auto& f : templates.fields) {
    auto it = record.fields.find(f.name);
    if (it == record.fields.end() || it->second.empty()) {
      if (f.optional) continue;
      throw Error(ErrorCode::kInvalidFieldValue, "field '" + f.name + "' is missing");
    }
    if (!value_allowed(f, it->second)) {
      throw Error(ErrorCode::kInvalidFieldValue,
                  "field '" + f.name + "' has invalid value '" + it->second + "'");
    }
  }
  for (const auto& [name, value] : record.fields) {
    if (!templates.find(name)) {
      throw Error(ErrorCode::kInvalidFieldValue, "unknown field '" + name + "' (value '" +
                                                     value + "')");
    }
  }
  for (const auto& [name, score] : record.traits) {
    if (!(score >= 1.0 && score <= 5.0)) {
      throw Error(ErrorCode::kInvalidFieldValue,
                  "trait '" + name + "' has invalid value '" + std::to_string(score) + "'");
    }
  }
}

PersonaText render_silicon_persona(const SiliconRecord& record,
                                   const SiliconTemplates& templates) {
  validate_record(record, templates);
  PersonaText out;
  out.persona_id = record.persona_id();
  out.kind = PersonaKind::kSilicon;
  out.source_row = record.source_row;
  for (const auto& f : templates.fields) {
    auto it = record.fields.find(f.name);
    if (it == record.fields.end() || it->second.empty()) continue;
    if (!f.requires_field.empty()) {
      auto dep = record.fields.find(f.requires_field);
      if (dep == record.fields.end() ||
          std::find(f.requires_any_of.begin(), f.requires_any_of.end(), dep->second) ==
              f.requires_any_of.end()) {
        continue;
      }
    }
    out.sentences.push_back(f.render(it->second));
  }
  return out;
}

std::map<std::string, std::string> extract_silicon_fields(
    const std::vector<std::string>& sentences, const SiliconTemplates& templates) {
  std::map<std::string, std::string> out;
  for (const auto& sentence : sentences) {
    std::vector<std::pair<std::string, std::string>> matches;
    for (const auto& f : templates.fields) {
      for (const auto& value : candidate_values(f, sentence)) {
        if (value_allowed(f, value) && f.render(value) == sentence) {
          matches.emplace_back(f.name, value);
        }
      }
    }
    if (matches.size() != 1) {
      throw Error(ErrorCode::kInvalidFieldValue,
                  "sentence '" + sentence + "' matches " + std::to_string(matches.size()) +
                      " template instantiations");
    }
    if (!out.emplace(matches[0].first, matches[0].second).second) {
      throw Error(ErrorCode::kInvalidFieldValue,
                  "field '" + matches[0].first + "' rendered more than once");
    }
  }
  return out;
}

std::vector<std::size_t> seeded_sample_indices(std::size_t count, std::size_t n,
                                               std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  const std::size_t take = std::min(n, count);
  // Partial Fisher-Yates with explicit index draws, so the permutation does not
  // depend on the standard library's distribution implementation.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (count - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

GenericCorpus read_generic_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  GenericCorpus corpus;
  std::vector<std::string> current;
  std::size_t record_no = 0;
  auto flush = [&] {
    if (current.empty()) return;
    ++record_no;
    if (current.size() == 4 || current.size() == 5) {
      PersonaText p;
      char buf[32];
      std::snprintf(buf, sizeof buf, "generic-%05zu", record_no);
      p.persona_id = buf;
      p.kind = PersonaKind::kGeneric;
      p.sentences = std::move(current);
      corpus.personas.push_back(std::move(p));
    } else {
      ++corpus.excluded;
    }
    current.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty()) {
      flush();
    } else {
      current.push_back(std::move(t));
    }
  }
  flush();
  if (record_no == 0) {
    throw Error(ErrorCode::kMalformedFile, path.string() + " contains no persona records");
  }
  return corpus;
}

std::vector<PersonaText> load_generic_personas(const std::filesystem::path& path,
                                               std::size_t n, std::uint64_t seed) {
  GenericCorpus corpus = read_generic_corpus(path);
  if (n > corpus.personas.size()) {
    throw Error(ErrorCode::kNotEnoughPersonas,
                "requested " + std::to_string(n) + " personas; " + path.string() + " has " +
                    std::to_string(corpus.personas.size()) + " eligible");
  }
  std::vector<PersonaText> out;
  out.reserve(n);
  for (std::size_t i : seeded_sample_indices(corpus.personas.size(), n, seed)) {
    out.push_back(corpus.personas[i]);
  }
  return out;
}

SiliconTable read_silicon_table(const std::filesystem::path& path,
                                const SiliconTemplates& templates) {
  const csv::Document doc = csv::read_document_file(path.string());
  std::vector<std::pair<std::string, std::size_t>> field_cols;
  std::vector<std::pair<std::string, std::size_t>> trait_cols;
  std::vector<std::string> missing;
  for (const auto& f : templates.fields) {
    if (auto c = doc.column(f.name)) {
      field_cols.emplace_back(f.name, *c);
    } else {
      missing.push_back(f.name);
    }
  }
  for (const auto& t : templates.traits) {
    if (auto c = doc.column(t)) {
      trait_cols.emplace_back(t, *c);
    } else {
      missing.push_back(t);
    }
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::kSchemaMismatch, path.string() + " lacks column(s): " + names);
  }

  SiliconTable table;
  std::set<std::vector<std::string>> seen;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& row = doc.rows[r];
    SiliconRecord rec;
    rec.source_row = r + 1;
    bool complete = true;
    std::vector<std::string> key;
    for (const auto& [name, col] : field_cols) {
      std::string v = trim(row[col]);
      if (v.empty() && !templates.find(name)->optional) complete = false;
      key.push_back(v);
      if (!v.empty()) rec.fields[name] = std::move(v);
    }
    for (const auto& [name, col] : trait_cols) {
      std::string v = trim(row[col]);
      key.push_back(v);
      auto d = parse_double(v);
      if (!d) {
        complete = false;
        continue;
      }
      rec.traits[name] = *d;
    }
    if (!complete) {
      ++table.incomplete_rows;
      continue;
    }
    if (!seen.insert(key).second) {
      ++table.duplicate_rows;
      continue;
    }
    try {
      validate_record(rec, templates);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidFieldValue,
                  path.string() + " data row " + std::to_string(rec.source_row) + ": " + e.what());
    }
    table.records.push_back(std::move(rec));
  }
  return table;
}

std::vector<SiliconRecord> sample_records(const SiliconTable& table, std::size_t n,
                                          std::uint64_t seed) {
  if (n > table.records.size()) {
    throw Error(ErrorCode::kNotEnoughRows, "requested " + std::to_string(n) + " records; " +
                                               std::to_string(table.records.size()) +
                                               " usable rows");
  }
  std::vector<SiliconRecord> out;
  out.reserve(n);
  for (std::size_t i : seeded_sample_indices(table.records.size(), n, seed)) {
    out.push_back(table.records[i]);
  }
  return out;
}

std::vector<SiliconRecord> sample_records(const std::filesystem::path& path, std::size_t n,
                                          std::uint64_t seed,
                                          const SiliconTemplates& templates) {
  return sample_records(read_silicon_table(path, templates), n, seed);
}

}  // namespace psychoprobe
