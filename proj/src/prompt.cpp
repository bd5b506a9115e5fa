#include "psychoprobe/prompt.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychoprobe/digest.hpp"
#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

std::string fill_range(std::string text, const Instrument& instrument) {
  std::string anchors;
  for (std::size_t i = 0; i < instrument.anchors.size(); ++i) {
    if (i) anchors += ", ";
    anchors += std::to_string(instrument.range.low + static_cast<int>(i)) + " = \"" +
               instrument.anchors[i] + "\"";
  }
  replace_all(text, "{low}", std::to_string(instrument.range.low));
  replace_all(text, "{high}", std::to_string(instrument.range.high));
  replace_all(text, "{anchors}", anchors);
  return text;
}

std::string format_temperature(double t) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", t);
  return buf;
}

InstrumentSlots parse_slots(const json& j) {
  return {j.at("test_instruction").get<std::string>(), j.at("item_postamble").get<std::string>()};
}

}  // namespace

int default_max_tokens(std::string_view model) {
  if (model.find("gpt-4") != std::string_view::npos) return 200;
  return 50;
}

ModelConfig model_profile(std::string_view model) {
  return {std::string(model), 0.0, default_max_tokens(model)};
}

const InstrumentSlots& PromptTemplate::slots_for(std::string_view instrument_id) const {
  auto it = per_instrument.find(std::string(instrument_id));
  return it == per_instrument.end() ? default_slots : it->second;
}

PromptTemplate parse_prompt_template(std::string_view json_text) {
  PromptTemplate t;
  try {
    const json doc = json::parse(json_text);
    t.personality_instruction = doc.at("personality_instruction").get<std::string>();
    t.default_slots = parse_slots(doc.at("default"));
    if (doc.contains("instruments")) {
      for (const auto& [id, slots] : doc["instruments"].items()) {
        t.per_instrument[id] = parse_slots(slots);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("prompt template: ") + e.what());
  }
  if (t.personality_instruction.find("{persona}") == std::string::npos) {
    throw Error(ErrorCode::kMalformedFile, "personality_instruction lacks {persona}");
  }
  auto check = [](const InstrumentSlots& s, const std::string& who) {
    if (s.test_instruction.empty() || s.item_postamble.empty()) {
      throw Error(ErrorCode::kMalformedFile, who + ": slot texts must be non-empty");
    }
  };
  check(t.default_slots, "default");
  for (const auto& [id, s] : t.per_instrument) check(s, id);
  return t;
}

PromptTemplate load_prompt_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_prompt_template(buf.str());
}

std::string assemble_prompt(const PromptTemplate& tmpl, const PersonaText& persona,
                            const Item& item, const Instrument& instrument) {
  if (!instrument.has_item(item.index) ||
      instrument.item(item.index).statement != item.statement) {
    throw Error(ErrorCode::kItemInstrumentMismatch,
                "item " + std::to_string(item.index) + " does not belong to " + instrument.id);
  }
  const std::string persona_text = persona.text();
  if (persona_text.empty()) {
    throw Error(ErrorCode::kInvalidInput, "persona '" + persona.persona_id + "' has no text");
  }
  const InstrumentSlots& slots = tmpl.slots_for(instrument.id);
  const std::string test_instruction = fill_range(slots.test_instruction, instrument);
  const std::string postamble = fill_range(slots.item_postamble, instrument);
  if (postamble.find(std::to_string(instrument.range.low)) == std::string::npos ||
      postamble.find(std::to_string(instrument.range.high)) == std::string::npos) {
    throw Error(ErrorCode::kMalformedFile,
                "item postamble for " + instrument.id + " does not state the response range");
  }

  std::string instruction = tmpl.personality_instruction;
  const std::size_t at = instruction.find("{persona}");
  instruction.replace(at, std::string_view("{persona}").size(), persona_text);

  // The statement must appear exactly once outside the verbatim persona text.
  const std::size_t fixed = count_occurrences(tmpl.personality_instruction, item.statement) +
                            count_occurrences(test_instruction, item.statement) +
                            count_occurrences(postamble, item.statement);
  if (fixed != 0) {
    throw Error(ErrorCode::kMalformedFile,
                "template slot text repeats the statement of " + instrument.id + " item " +
                    std::to_string(item.index));
  }

  std::string out;
  out.reserve(instruction.size() + test_instruction.size() + item.statement.size() +
              postamble.size() + 4);
  out += instruction;
  out += "\n\n";
  out += test_instruction;
  out += '\n';
  out += item.statement;
  out += '\n';
  out += postamble;
  return out;
}

std::string request_key(std::string_view prompt_text, const ModelConfig& config) {
  std::string material = config.model;
  material += '\n';
  material += format_temperature(config.temperature);
  material += '\n';
  material += std::to_string(config.max_tokens);
  material += '\n';
  material += prompt_text;
  return sha256_hex(material);
}

std::string job_id_for(std::string_view persona_id, std::string_view prompt_text,
                       const ModelConfig& config) {
  std::string material(persona_id);
  material += '\n';
  material += request_key(prompt_text, config);
  return sha256_hex(material);
}

std::vector<PromptJob> build_batch(const PromptTemplate& tmpl,
                                   const std::vector<PersonaText>& personas,
                                   const std::vector<Instrument>& instruments,
                                   const std::vector<ModelConfig>& model_configs) {
  if (personas.empty() || instruments.empty() || model_configs.empty()) {
    throw Error(ErrorCode::kInvalidInput, "build_batch needs personas, instruments and models");
  }
  std::set<std::string> persona_ids;
  for (const auto& p : personas) {
    if (!persona_ids.insert(p.persona_id).second) {
      throw Error(ErrorCode::kInvalidInput, "duplicate persona id " + p.persona_id);
    }
  }
  std::size_t items = 0;
  for (const auto& inst : instruments) items += inst.items.size();

  std::vector<PromptJob> jobs;
  jobs.reserve(personas.size() * items * model_configs.size());
  std::set<std::string> ids;
  for (const auto& persona : personas) {
    for (const auto& inst : instruments) {
      for (const auto& item : inst.items) {
        const std::string prompt = assemble_prompt(tmpl, persona, item, inst);
        for (const auto& cfg : model_configs) {
          PromptJob job;
          job.persona_id = persona.persona_id;
          job.instrument_id = inst.id;
          job.item_index = item.index;
          job.prompt_text = prompt;
          job.model_config = cfg;
          job.job_id = job_id_for(persona.persona_id, prompt, cfg);
          if (!ids.insert(job.job_id).second) {
            throw Error(ErrorCode::kInvalidInput, "duplicate job id for persona " +
                                                      persona.persona_id + ", " + inst.id +
                                                      " item " + std::to_string(item.index));
          }
          jobs.push_back(std::move(job));
        }
      }
    }
  }
  return jobs;
}

void write_batch_jsonl(std::ostream& out, const std::vector<PromptJob>& jobs,
                       std::string_view run_id) {
  for (const auto& job : jobs) {
    json j;
    j["job_id"] = job.job_id;
    j["persona_id"] = job.persona_id;
    j["instrument_id"] = job.instrument_id;
    j["item_index"] = job.item_index;
    j["model"] = job.model_config.model;
    j["temperature"] = job.model_config.temperature;
    j["max_tokens"] = job.model_config.max_tokens;
    j["prompt_text"] = job.prompt_text;
    j["run_id"] = run_id;
    out << j.dump() << '\n';
  }
}

BatchFile read_batch_jsonl(std::istream& in) {
  BatchFile batch;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PromptJob job;
      job.job_id = j.at("job_id").get<std::string>();
      job.persona_id = j.at("persona_id").get<std::string>();
      job.instrument_id = j.at("instrument_id").get<std::string>();
      job.item_index = j.at("item_index").get<int>();
      job.model_config.model = j.at("model").get<std::string>();
      job.model_config.temperature = j.at("temperature").get<double>();
      job.model_config.max_tokens = j.at("max_tokens").get<int>();
      job.prompt_text = j.at("prompt_text").get<std::string>();
      const std::string run_id = j.value("run_id", std::string());
      if (batch.jobs.empty()) {
        batch.run_id = run_id;
      } else if (run_id != batch.run_id) {
        throw Error(ErrorCode::kRunMismatch, "batch mixes run ids at line " +
                                                 std::to_string(line_no));
      }
      batch.jobs.push_back(std::move(job));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedFile,
                  "batch line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return batch;
}

}  // namespace psychoprobe
