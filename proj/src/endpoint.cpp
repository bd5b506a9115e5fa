#include <cstdlib>
#include <ctime>
#include <regex>

#include <nlohmann/json.hpp>

#include "psychoprobe/error.hpp"
#include "psychoprobe/respondent.hpp"

// after Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace psychoprobe {
namespace {

using json = nlohmann::json;

std::string iso_utc(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

EndpointConfig endpoint_config_from_env(std::string url) {
  EndpointConfig c;
  c.url = std::move(url);
  const char* key = std::getenv(kApiKeyVariable);
  if (!key || !*key) {
    throw Error(ErrorCode::kAuthMissing, std::string(kApiKeyVariable) + " is not set");
  }
  c.api_key = key;
  return c;
}

std::string chat_request_body(const PromptJob& job) {
  json body;
  body["model"] = job.model_config.model;
  body["messages"] = json::array({{{"role", "user"}, {"content", job.prompt_text}}});
  body["temperature"] = job.model_config.temperature;
  body["max_tokens"] = job.model_config.max_tokens;
  return body.dump();
}

EndpointRespondent::EndpointRespondent(EndpointConfig config) : config_(std::move(config)) {
  if (config_.api_key.empty()) {
    throw Error(ErrorCode::kAuthMissing, "no API key for " + config_.url);
  }
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.url, m, kUrl)) {
    throw Error(ErrorCode::kConfigInvalid, "endpoint URL '" + config_.url + "' is not http(s)");
  }
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

Attempt EndpointRespondent::attempt(const PromptJob& job) const {
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  client.set_bearer_token_auth(config_.api_key);

  Attempt out;
  const auto res = client.Post(path_, chat_request_body(job), "application/json");
  if (!res) {
    out.status = Attempt::Status::kTransient;
    out.reason = "unreachable";
    return out;
  }
  if (res->status != 200) {
    out.status = transient_status(res->status) ? Attempt::Status::kTransient : Attempt::Status::kFatal;
    out.reason = "http_" + std::to_string(res->status);
    return out;
  }
  try {
    const json j = json::parse(res->body);
    out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    out.created_at = iso_utc(j.contains("created") && j["created"].is_number_integer()
                                 ? j["created"].get<std::time_t>()
                                 : std::time(nullptr));
  } catch (const json::exception&) {
    out.status = Attempt::Status::kFatal;
    out.reason = "malformed_body";
  }
  return out;
}

}  // namespace psychoprobe
