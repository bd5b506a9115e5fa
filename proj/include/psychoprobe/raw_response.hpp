#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace psychoprobe {

enum class RespondentKind { kEndpoint, kSynthetic, kReplay };

std::string_view respondent_kind_name(RespondentKind kind);
RespondentKind parse_respondent_kind(std::string_view name);

// One administration outcome. `text` is the verbatim completion; failed jobs
// carry a reason code instead and map to missing items downstream.
struct RawResponse {
  std::string job_id;
  std::string text;
  RespondentKind respondent = RespondentKind::kSynthetic;
  std::int64_t latency_ms = 0;
  int attempt = 1;
  std::optional<std::string> created_at;  // endpoint responses only
  bool ok = true;
  std::string failure_reason;  // e.g. "http_503", "unreachable", "missing_in_archive"
  bool cached = false;

  static RawResponse failure(std::string job_id, RespondentKind kind, std::string reason,
                             int attempt = 1);
};

void write_response_jsonl(std::ostream& out, const RawResponse& response,
                          std::string_view run_id);

struct ResponseArchive {
  std::string run_id;
  std::vector<RawResponse> responses;
};

ResponseArchive read_responses_jsonl(std::istream& in);

}  // namespace psychoprobe
