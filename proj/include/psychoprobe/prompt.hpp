#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "psychoprobe/persona.hpp"
#include "psychoprobe/scale_bank.hpp"

namespace psychoprobe {

struct ModelConfig {
  std::string model;
  double temperature = 0.0;
  int max_tokens = 50;

  bool operator==(const ModelConfig&) const = default;
};

// Token caps per model family: 50 for GPT-3.5, 200 for GPT-4; 50 otherwise.
int default_max_tokens(std::string_view model);
ModelConfig model_profile(std::string_view model);

// Slot texts may use {low}, {high} and {anchors}; the personality instruction
// must contain {persona}.
struct InstrumentSlots {
  std::string test_instruction;
  std::string item_postamble;
};

struct PromptTemplate {
  std::string personality_instruction;
  InstrumentSlots default_slots;
  std::map<std::string, InstrumentSlots> per_instrument;

  const InstrumentSlots& slots_for(std::string_view instrument_id) const;
};

PromptTemplate parse_prompt_template(std::string_view json_text);
PromptTemplate load_prompt_template(const std::filesystem::path& path);

struct PromptJob {
  std::string job_id;
  std::string persona_id;
  std::string instrument_id;
  int item_index = 0;
  std::string prompt_text;
  ModelConfig model_config;
};

// Personality instruction (with the persona substituted), test instruction,
// item statement and item postamble, in that order.
std::string assemble_prompt(const PromptTemplate& tmpl, const PersonaText& persona,
                            const Item& item, const Instrument& instrument);

// Digest of (prompt_text, model, temperature, max_tokens). Identical requests
// share a key and therefore a cache entry.
std::string request_key(std::string_view prompt_text, const ModelConfig& config);

// Digest of (persona_id, request_key). Personas with identical descriptions
// still get distinct job ids.
std::string job_id_for(std::string_view persona_id, std::string_view prompt_text,
                       const ModelConfig& config);

// One job per persona x item x model, ordered (persona, instrument, item, model).
std::vector<PromptJob> build_batch(const PromptTemplate& tmpl,
                                   const std::vector<PersonaText>& personas,
                                   const std::vector<Instrument>& instruments,
                                   const std::vector<ModelConfig>& model_configs);

void write_batch_jsonl(std::ostream& out, const std::vector<PromptJob>& jobs,
                       std::string_view run_id);

struct BatchFile {
  std::string run_id;
  std::vector<PromptJob> jobs;
};

BatchFile read_batch_jsonl(std::istream& in);

}  // namespace psychoprobe
