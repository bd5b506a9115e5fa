#pragma once

// Persona descriptions: generic free-text personas sampled from a corpus, and
// silicon personas rendered from demographic records through sentence
// templates stored as data.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace psychoprobe {

enum class PersonaKind { kGeneric, kSilicon };

std::string_view persona_kind_name(PersonaKind kind);

struct PersonaText {
  std::string persona_id;
  PersonaKind kind = PersonaKind::kGeneric;
  std::vector<std::string> sentences;
  std::optional<std::size_t> source_row;  // silicon personas only

  // Sentences joined by single spaces; this is what goes into prompts.
  std::string text() const;
};

// One template per demographic variable. A field renders to exactly one
// sentence: either a whole-sentence override for the value, or `pattern` with
// "{value}" replaced by the value's phrase (the value itself by default).
struct FieldTemplate {
  enum class Kind { kInteger, kEnum };
  // How the variable becomes numeric covariates: the integer itself, the
  // index in `values`, 0/1 on the second listed value, or one-hot columns.
  enum class Encoding { kNumeric, kOrdinal, kBinary, kNominal };

  std::string name;
  Kind kind = Kind::kEnum;
  int min = 0;
  int max = 0;
  std::vector<std::string> values;
  bool open = false;      // enum accepts values beyond `values`
  bool optional = false;  // empty cell allowed; nothing rendered
  Encoding encoding = Encoding::kNominal;
  std::string requires_field;
  std::vector<std::string> requires_any_of;
  std::string pattern;
  std::map<std::string, std::string> phrases;
  std::map<std::string, std::string> sentences;

  std::string render(const std::string& value) const;
};

struct SiliconTemplates {
  std::vector<FieldTemplate> fields;  // rendering order
  std::vector<std::string> traits;    // ground-truth columns, never rendered

  const FieldTemplate* find(std::string_view name) const;
};

SiliconTemplates parse_silicon_templates(std::string_view json_text);
SiliconTemplates load_silicon_templates(const std::filesystem::path& path);

struct SiliconRecord {
  std::size_t source_row = 0;  // 1-based data row in the source table
  std::map<std::string, std::string> fields;  // demographic variables
  std::map<std::string, double> traits;       // bfi_e, bfi_a, ... in [1, 5]

  std::string persona_id() const;
};

// Throws InvalidFieldValue naming the field and offending value.
void validate_record(const SiliconRecord& record, const SiliconTemplates& templates);

PersonaText render_silicon_persona(const SiliconRecord& record,
                                   const SiliconTemplates& templates);

// Inverse of rendering: maps each sentence back to its (field, value). Throws
// InvalidFieldValue if a sentence matches no template instantiation or more
// than one.
std::map<std::string, std::string> extract_silicon_fields(
    const std::vector<std::string>& sentences, const SiliconTemplates& templates);

struct GenericCorpus {
  std::vector<PersonaText> personas;  // eligible records, file order
  std::size_t excluded = 0;           // records outside 4-5 sentences
};

// Records are separated by blank lines; one sentence per line.
GenericCorpus read_generic_corpus(const std::filesystem::path& path);

std::vector<PersonaText> load_generic_personas(const std::filesystem::path& path,
                                               std::size_t n, std::uint64_t seed);

struct SiliconTable {
  std::vector<SiliconRecord> records;
  std::size_t incomplete_rows = 0;
  std::size_t duplicate_rows = 0;
};

// Reads the record CSV, dropping rows with a missing required field and
// exact duplicates (first occurrence kept).
SiliconTable read_silicon_table(const std::filesystem::path& path,
                                const SiliconTemplates& templates);

std::vector<SiliconRecord> sample_records(const SiliconTable& table, std::size_t n,
                                          std::uint64_t seed);
std::vector<SiliconRecord> sample_records(const std::filesystem::path& path, std::size_t n,
                                          std::uint64_t seed,
                                          const SiliconTemplates& templates);

// Deterministic permutation of [0, count) driven by `seed`; first `n` kept.
std::vector<std::size_t> seeded_sample_indices(std::size_t count, std::size_t n,
                                               std::uint64_t seed);

}  // namespace psychoprobe
