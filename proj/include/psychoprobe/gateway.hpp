#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "psychoprobe/prompt.hpp"
#include "psychoprobe/raw_response.hpp"
#include "psychoprobe/respondent.hpp"

namespace psychoprobe {

struct CacheEntry {
  std::string key;
  std::string text;
  std::optional<std::string> created_at;
};

// Successful completions keyed by request_key, one file per key under a
// two-character prefix directory: <dir>/ab/<key>.json.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::filesystem::path path_for(const std::string& key) const;
  // Throws CacheCorrupt when the file exists but is unreadable, names another
  // key, or its text digest does not match.
  std::optional<CacheEntry> get(const std::string& key) const;
  // Writes a temp file next to the target and renames it into place.
  void put(const CacheEntry& entry) const;

 private:
  std::filesystem::path dir_;
};

struct AdministerLimits {
  std::size_t max_in_flight = 4;
  double requests_per_second = 0.0;  // 0 disables the limit
  int max_retries = 3;               // a job gets at most 1 + max_retries attempts
  std::chrono::milliseconds backoff{500};
  std::chrono::milliseconds max_backoff{8000};
};

struct AdministerOptions {
  AdministerLimits limits;
  std::optional<std::filesystem::path> cache_dir;
  // Called once per job in completion order, never concurrently.
  std::function<void(const RawResponse&)> on_response;
};

struct AdministerStats {
  std::size_t remote_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t failures = 0;
  std::size_t retries = 0;
};

// One response per job, in batch order. Jobs that still fail after the last
// attempt come back as failure responses. Throws EndpointUnreachable when a
// remote respondent could not be reached for any uncached job, and rethrows
// errors raised by the respondent itself (UnknownItem, CacheCorrupt).
std::vector<RawResponse> administer(const std::vector<PromptJob>& batch,
                                    const Respondent& respondent,
                                    const AdministerOptions& options = {},
                                    AdministerStats* stats = nullptr);

}  // namespace psychoprobe
