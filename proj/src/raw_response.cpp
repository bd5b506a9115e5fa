#include "psychoprobe/raw_response.hpp"

#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "psychoprobe/error.hpp"

namespace psychoprobe {

using json = nlohmann::json;

std::string_view respondent_kind_name(RespondentKind kind) {
  switch (kind) {
    case RespondentKind::kEndpoint: return "endpoint";
    case RespondentKind::kSynthetic: return "synthetic";
    case RespondentKind::kReplay: return "replay";
  }
  return "unknown";
}

RespondentKind parse_respondent_kind(std::string_view name) {
  if (name == "endpoint") return RespondentKind::kEndpoint;
  if (name == "synthetic") return RespondentKind::kSynthetic;
  if (name == "replay") return RespondentKind::kReplay;
  throw Error(ErrorCode::kMalformedFile, "unknown respondent kind '" + std::string(name) + "'");
}

RawResponse RawResponse::failure(std::string job_id, RespondentKind kind, std::string reason,
                                 int attempt) {
  RawResponse r;
  r.job_id = std::move(job_id);
  r.respondent = kind;
  r.ok = false;
  r.failure_reason = std::move(reason);
  r.attempt = attempt;
  return r;
}

void write_response_jsonl(std::ostream& out, const RawResponse& r, std::string_view run_id) {
  json j;
  j["job_id"] = r.job_id;
  j["text"] = r.text;
  j["respondent"] = respondent_kind_name(r.respondent);
  j["latency_ms"] = r.latency_ms;
  j["attempt"] = r.attempt;
  j["created_at"] = r.created_at ? json(*r.created_at) : json(nullptr);
  j["ok"] = r.ok;
  if (!r.ok) j["failure_reason"] = r.failure_reason;
  j["run_id"] = run_id;
  out << j.dump() << '\n';
}

ResponseArchive read_responses_jsonl(std::istream& in) {
  ResponseArchive archive;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      RawResponse r;
      r.job_id = j.at("job_id").get<std::string>();
      r.text = j.value("text", std::string());
      r.respondent = parse_respondent_kind(j.value("respondent", std::string("replay")));
      r.latency_ms = j.value("latency_ms", std::int64_t{0});
      r.attempt = j.value("attempt", 1);
      if (j.contains("created_at") && j["created_at"].is_string()) {
        r.created_at = j["created_at"].get<std::string>();
      }
      r.ok = j.value("ok", true);
      r.failure_reason = j.value("failure_reason", std::string());
      const std::string run_id = j.value("run_id", std::string());
      if (first) {
        archive.run_id = run_id;
        first = false;
      } else if (run_id != archive.run_id) {
        throw Error(ErrorCode::kRunMismatch,
                    "response archive mixes run ids at line " + std::to_string(line_no));
      }
      archive.responses.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedFile,
                  "response line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return archive;
}

}  // namespace psychoprobe
