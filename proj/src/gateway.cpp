#include "psychoprobe/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "psychoprobe/digest.hpp"
#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// Token bucket holding a single token: callers are spaced 1/rate apart.
class RateLimiter {
 public:
  explicit RateLimiter(double rate) : rate_(rate) {}

  void acquire() {
    if (rate_ <= 0.0) return;
    Clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = Clock::now();
      slot = std::max(now, next_);
      next_ = slot + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / rate_));
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  double rate_;
  std::mutex mu_;
  Clock::time_point next_{};
};

std::atomic<std::uint64_t> temp_counter{0};

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  if (key.size() < 3) throw Error(ErrorCode::kInvalidInput, "cache key '" + key + "' is too short");
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CacheEntry> ResponseCache::get(const std::string& key) const {
  const auto path = path_for(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  CacheEntry e;
  try {
    const json j = json::parse(ss.str());
    e.key = j.at("key").get<std::string>();
    e.text = j.at("text").get<std::string>();
    if (j.contains("created_at") && j["created_at"].is_string()) {
      e.created_at = j["created_at"].get<std::string>();
    }
    if (e.key != key) {
      throw Error(ErrorCode::kCacheCorrupt, path.string() + " holds key " + e.key);
    }
    if (j.at("digest").get<std::string>() != sha256_hex(e.text)) {
      throw Error(ErrorCode::kCacheCorrupt, path.string() + " text does not match its digest");
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kCacheCorrupt, path.string() + ": " + ex.what());
  }
  return e;
}

void ResponseCache::put(const CacheEntry& entry) const {
  const auto path = path_for(entry.key);
  std::filesystem::create_directories(path.parent_path());
  json j;
  j["key"] = entry.key;
  j["text"] = entry.text;
  j["digest"] = sha256_hex(entry.text);
  j["created_at"] = entry.created_at ? json(*entry.created_at) : json(nullptr);
  auto tmp = path;
  tmp += ".tmp." + std::to_string(temp_counter.fetch_add(1)) + "." +
         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump();
    if (!out) throw Error(ErrorCode::kInvalidInput, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<RawResponse> administer(const std::vector<PromptJob>& batch,
                                    const Respondent& respondent,
                                    const AdministerOptions& options, AdministerStats* stats) {
  const auto& limits = options.limits;
  std::vector<RawResponse> out(batch.size());
  std::optional<ResponseCache> cache;
  if (options.cache_dir && respondent.remote()) cache.emplace(*options.cache_dir);
  RateLimiter limiter(respondent.remote() ? limits.requests_per_second : 0.0);

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> remote_calls{0}, cache_hits{0}, failures{0}, retries{0};
  std::atomic<std::size_t> uncached{0}, unreachable{0};
  std::mutex sink_mu, err_mu;
  std::exception_ptr error;

  auto run_job = [&](const PromptJob& job) -> RawResponse {
    const auto kind = respondent.kind();
    std::string key;
    if (cache) {
      key = request_key(job.prompt_text, job.model_config);
      if (auto hit = cache->get(key)) {
        ++cache_hits;
        RawResponse r;
        r.job_id = job.job_id;
        r.text = std::move(hit->text);
        r.respondent = kind;
        r.created_at = hit->created_at;
        r.cached = true;
        return r;
      }
    }
    if (!respondent.remote()) {
      Attempt a = respondent.attempt(job);
      if (a.status != Attempt::Status::kOk) return RawResponse::failure(job.job_id, kind, a.reason);
      RawResponse r;
      r.job_id = job.job_id;
      r.text = std::move(a.text);
      r.respondent = kind;
      return r;
    }
    ++uncached;
    auto backoff = limits.backoff;
    Attempt a;
    int n = 0;
    const auto start = Clock::now();
    for (;;) {
      ++n;
      limiter.acquire();
      ++remote_calls;
      a = respondent.attempt(job);
      if (a.status != Attempt::Status::kTransient || n > limits.max_retries) break;
      ++retries;
      std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, limits.max_backoff);
    }
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
    if (a.status != Attempt::Status::kOk) {
      if (a.reason == "unreachable") ++unreachable;
      auto r = RawResponse::failure(job.job_id, kind, a.reason, n);
      r.latency_ms = latency;
      return r;
    }
    RawResponse r;
    r.job_id = job.job_id;
    r.text = std::move(a.text);
    r.respondent = kind;
    r.latency_ms = latency;
    r.attempt = n;
    r.created_at = a.created_at;
    if (cache) cache->put({key, r.text, r.created_at});
    return r;
  };

  auto worker = [&] {
    for (;;) {
      {
        std::lock_guard lock(err_mu);
        if (error) return;
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= batch.size()) return;
      try {
        RawResponse r = run_job(batch[i]);
        if (!r.ok) ++failures;
        std::lock_guard lock(sink_mu);
        if (options.on_response) options.on_response(r);
        out[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t workers =
      std::max<std::size_t>(1, std::min(limits.max_in_flight, batch.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  if (stats) {
    stats->remote_calls = remote_calls;
    stats->cache_hits = cache_hits;
    stats->failures = failures;
    stats->retries = retries;
  }
  if (uncached > 0 && unreachable == uncached) {
    throw Error(ErrorCode::kEndpointUnreachable,
                "no response from the endpoint for any of " + std::to_string(uncached.load()) +
                    " uncached jobs");
  }
  return out;
}

ReplayResult replay(const std::vector<PromptJob>& batch, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  ResponseArchive archive = read_responses_jsonl(in);

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < archive.responses.size(); ++i) {
    index.emplace(archive.responses[i].job_id, i);
  }
  ReplayResult out;
  out.run_id = archive.run_id;
  std::set<std::string> wanted;
  for (const auto& job : batch) {
    wanted.insert(job.job_id);
    auto it = index.find(job.job_id);
    if (it == index.end()) {
      out.responses.push_back(
          RawResponse::failure(job.job_id, RespondentKind::kReplay, "missing_in_archive"));
      ++out.missing;
      continue;
    }
    out.responses.push_back(archive.responses[it->second]);
    ++out.matched;
  }
  for (const auto& [id, i] : index) {
    if (!wanted.count(id)) ++out.extra;
  }
  return out;
}

}  // namespace psychoprobe
