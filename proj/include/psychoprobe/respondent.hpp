#pragma once

// Respondents that turn a PromptJob into completion text: a remote
// chat-completion endpoint, a seeded latent-trait simulator, and replay of a
// stored response archive.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "psychoprobe/prompt.hpp"
#include "psychoprobe/raw_response.hpp"
#include "psychoprobe/response_parser.hpp"
#include "psychoprobe/scale_bank.hpp"

namespace psychoprobe {

// Outcome of a single request. Transient outcomes are retried by administer.
struct Attempt {
  enum class Status { kOk, kTransient, kFatal };
  Status status = Status::kOk;
  std::string text;
  std::string reason;
  std::optional<std::string> created_at;
};

class Respondent {
 public:
  virtual ~Respondent() = default;
  virtual RespondentKind kind() const = 0;
  // Remote respondents go through the cache, rate limit and retries.
  virtual bool remote() const { return false; }
  // Must be safe to call from several threads at once.
  virtual Attempt attempt(const PromptJob& job) const = 0;
};

// ---- synthetic -------------------------------------------------------------

enum class WordingMode { kBareDigit, kEmbeddedDigit, kNoDigitFraction };

std::string_view wording_mode_name(WordingMode mode);
WordingMode parse_wording_mode(std::string_view name);

struct SyntheticItem {
  std::size_t factor = 0;
  double loading = 0.0;  // already negated for reverse-keyed items
  double residual_sd = 1.0;
};

struct SyntheticRespondentConfig {
  std::vector<std::string> factors;
  std::map<ItemRef, SyntheticItem> items;
  Eigen::MatrixXd factor_covariance;
  std::array<double, 4> thresholds{-1.5, -0.5, 0.5, 1.5};
  WordingMode wording = WordingMode::kBareDigit;
  double no_digit_fraction = 0.0;  // used by kNoDigitFraction only
  std::uint64_t seed = 0;

  // Throws ConfigInvalid: factor covariance not symmetric PD, thresholds not
  // strictly increasing, fraction outside [0, 1], factor index out of range,
  // negative residual sd.
  void validate() const;
};

// Simple-structure settings for synthetic_config: one factor per subscale.
struct SyntheticSpec {
  double loading = 0.8;
  // Correlation between the subscale factors of the same instrument; factors
  // of different instruments are uncorrelated.
  double factor_correlation = 0.0;
  std::array<double, 4> thresholds{-1.5, -0.5, 0.5, 1.5};
  WordingMode wording = WordingMode::kBareDigit;
  double no_digit_fraction = 0.0;
  std::uint64_t seed = 0;
};

// Every item loads `spec.loading` on its subscale's factor (negated when
// reverse keyed) with residual sd sqrt(1 - loading^2), so the continuous
// response has unit variance. Factors are named "INST:SUB".
SyntheticRespondentConfig synthetic_config(const std::vector<Instrument>& instruments,
                                           const SyntheticSpec& spec);

// JSON form: {"seed", "thresholds", "wording", "no_digit_fraction",
// "factors": [names], "factor_covariance": [[...]],
// "items": {"BFI_1": {"factor": "BFI:E", "loading": .8, "residual_sd": .6}}}.
SyntheticRespondentConfig parse_synthetic_config(std::string_view json_text);
SyntheticRespondentConfig load_synthetic_config(const std::filesystem::path& path);

// Latent factor scores for a persona; the same vector for all of its items.
Eigen::VectorXd synthetic_latent(const SyntheticRespondentConfig& config,
                                 std::string_view persona_id);

// Category 1..5 for the persona's continuous response to the item.
int synthetic_value(const SyntheticRespondentConfig& config, std::string_view persona_id,
                    const ItemRef& item);

// Deterministic in (seed, persona_id, instrument, item_index). Throws
// UnknownItem when the job's item has no loading.
RawResponse synthetic_respond(const PromptJob& job, const SyntheticRespondentConfig& config);

class SyntheticRespondent : public Respondent {
 public:
  explicit SyntheticRespondent(SyntheticRespondentConfig config);
  RespondentKind kind() const override { return RespondentKind::kSynthetic; }
  Attempt attempt(const PromptJob& job) const override;
  const SyntheticRespondentConfig& config() const noexcept { return config_; }

 private:
  SyntheticRespondentConfig config_;
};

// ---- endpoint --------------------------------------------------------------

inline constexpr const char* kDefaultEndpointUrl = "https://api.openai.com/v1/chat/completions";
inline constexpr const char* kApiKeyVariable = "PSYCHOPROBE_API_KEY";

struct EndpointConfig {
  std::string url = kDefaultEndpointUrl;
  std::string api_key;
  std::chrono::seconds timeout{60};
};

// Reads the key from PSYCHOPROBE_API_KEY. Throws AuthMissing if unset or empty.
EndpointConfig endpoint_config_from_env(std::string url = kDefaultEndpointUrl);

// {"model", "messages": [{"role": "user", "content": prompt}], "temperature", "max_tokens"}
std::string chat_request_body(const PromptJob& job);

class EndpointRespondent : public Respondent {
 public:
  // Throws AuthMissing for an empty key, ConfigInvalid for a bad URL.
  explicit EndpointRespondent(EndpointConfig config);
  RespondentKind kind() const override { return RespondentKind::kEndpoint; }
  bool remote() const override { return true; }
  Attempt attempt(const PromptJob& job) const override;

 private:
  EndpointConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
};

// ---- replay ----------------------------------------------------------------

struct ReplayResult {
  std::vector<RawResponse> responses;  // batch order
  std::size_t matched = 0;
  std::size_t missing = 0;  // recorded as "missing_in_archive" failures
  std::size_t extra = 0;    // archive entries with no job in the batch
  std::string run_id;
};

// Throws MalformedFile.
ReplayResult replay(const std::vector<PromptJob>& batch, const std::filesystem::path& path);

}  // namespace psychoprobe
