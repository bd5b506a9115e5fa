#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "psychoprobe/error.hpp"
#include "psychoprobe/gateway.hpp"
#include "psychoprobe/psychometrics/covariance.hpp"
#include "psychoprobe/psychometrics/reliability.hpp"
#include "psychoprobe/respondent.hpp"
#include "psychoprobe/response_parser.hpp"
#include "psychoprobe/scale_bank.hpp"
#include "test_support.hpp"

// after Eigen, see endpoint.cpp
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

using namespace psychoprobe;
using json = nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("psychoprobe_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

PromptJob job_for(const std::string& persona, const std::string& inst, int item,
                  const std::string& prompt = "") {
  PromptJob j;
  j.persona_id = persona;
  j.instrument_id = inst;
  j.item_index = item;
  j.prompt_text = prompt.empty() ? persona + "/" + inst + "/" + std::to_string(item) : prompt;
  j.model_config = {"gpt-3.5-turbo", 0.0, 50};
  j.job_id = job_id_for(persona, j.prompt_text, j.model_config);
  return j;
}

// Four items on two correlated factors; T_2 is reverse keyed and T_4 does not
// have unit total variance.
SyntheticRespondentConfig two_factor_config(std::uint64_t seed) {
  SyntheticRespondentConfig c;
  c.factors = {"F1", "F2"};
  c.factor_covariance.resize(2, 2);
  c.factor_covariance << 1.0, 0.4, 0.4, 1.0;
  c.items[{"T", 1}] = {0, 0.8, 0.6};
  c.items[{"T", 2}] = {0, -0.7, std::sqrt(1 - 0.49)};
  c.items[{"T", 3}] = {1, 0.6, 0.8};
  c.items[{"T", 4}] = {1, 0.5, 0.9};
  c.seed = seed;
  return c;
}

Instrument bfi() { return load_instrument(testsupport::data_dir() / "instruments" / "bfi.json"); }

// Keyed responses of n personas to one subscale, as a data table.
DataTable simulate_subscale(const SyntheticRespondentConfig& c, const Instrument& inst,
                            const std::string& sub, int n) {
  const auto& items = inst.subscale(sub).item_indices;
  Eigen::MatrixXd v(n, static_cast<Eigen::Index>(items.size()));
  for (int p = 0; p < n; ++p) {
    const std::string id = "p" + std::to_string(p);
    for (std::size_t k = 0; k < items.size(); ++k) {
      int value = synthetic_value(c, id, {inst.id, items[k]});
      if (inst.item(items[k]).reverse_keyed) value = reverse_key(value, inst.range);
      v(p, static_cast<Eigen::Index>(k)) = value;
    }
  }
  return testsupport::to_table(v);
}

// Chat-completion stand-in that records what it receives.
class FakeEndpoint {
 public:
  std::atomic<int> calls{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> max_in_flight{0};
  std::chrono::milliseconds delay{0};
  int fail_first = 0;        // per prompt, answered with 503
  int status_always = 200;   // non-200 answers every request with this status
  std::mutex mu;
  std::vector<json> bodies;
  std::vector<std::chrono::steady_clock::time_point> arrivals;
  std::map<std::string, int> seen;

  FakeEndpoint() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int now = ++in_flight;
      int prev = max_in_flight.load();
      while (now > prev && !max_in_flight.compare_exchange_weak(prev, now)) {
      }
      ++calls;
      const json body = json::parse(req.body);
      int count = 0;
      {
        std::lock_guard lock(mu);
        bodies.push_back(body);
        arrivals.push_back(std::chrono::steady_clock::now());
        count = ++seen[body["messages"][0]["content"].get<std::string>()];
      }
      std::this_thread::sleep_for(delay);
      if (status_always != 200) {
        res.status = status_always;
      } else if (count <= fail_first) {
        res.status = 503;
      } else {
        const json reply = {{"created", 1700000000},
                            {"choices", {{{"message", {{"role", "assistant"}, {"content", " 4\n"}}}}}}};
        res.set_content(reply.dump(), "application/json");
      }
      --in_flight;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

EndpointRespondent fake_respondent(const FakeEndpoint& ep) {
  EndpointConfig c;
  c.url = ep.url();
  c.api_key = "test-key";
  c.timeout = std::chrono::seconds(5);
  return EndpointRespondent(c);
}

AdministerOptions fast_options() {
  AdministerOptions o;
  o.limits.backoff = std::chrono::milliseconds(1);
  o.limits.max_backoff = std::chrono::milliseconds(4);
  return o;
}

std::vector<PromptJob> numbered_jobs(int n) {
  std::vector<PromptJob> out;
  for (int i = 0; i < n; ++i) out.push_back(job_for("p" + std::to_string(i), "BFI", 1));
  return out;
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("same seed, persona and item give identical text") {
    auto c = two_factor_config(7);
    c.wording = WordingMode::kEmbeddedDigit;
    const auto job = job_for("persona-1", "T", 3);
    CHECK(synthetic_respond(job, c).text == synthetic_respond(job, c).text);
    CHECK(synthetic_latent(c, "persona-1").isApprox(synthetic_latent(c, "persona-1")));

    // a different seed changes at least some of 50 personas' answers
    auto other = c;
    other.seed = 8;
    int differ = 0;
    for (int p = 0; p < 50; ++p) {
      const auto j = job_for("p" + std::to_string(p), "T", 1);
      differ += synthetic_respond(j, c).text != synthetic_respond(j, other).text;
    }
    CHECK(differ > 10);
  }

  TEST_CASE("unknown item") {
    const auto c = two_factor_config(1);
    CHECK_THROWS_WITH_AS(synthetic_respond(job_for("p", "T", 9), c), doctest::Contains("UnknownItem"),
                         Error);
  }

  TEST_CASE("config validation") {
    auto c = two_factor_config(1);
    CHECK_NOTHROW(c.validate());
    auto bad = c;
    bad.factor_covariance(0, 1) = bad.factor_covariance(1, 0) = 1.2;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("positive definite"), Error);
    bad = c;
    bad.thresholds = {-1, 0, 0, 1};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("ConfigInvalid"), Error);
    bad = c;
    bad.no_digit_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.factor_covariance(0, 1) = 0.3;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("symmetric"), Error);
  }

  TEST_CASE("json config round trip") {
    const std::string text = R"({
      "seed": 11, "wording": "embedded-digit",
      "factors": ["F1", "F2"], "factor_covariance": [[1, 0.4], [0.4, 1]],
      "items": {"T_1": {"factor": "F1", "loading": 0.8},
                "T_3": {"factor": "F2", "loading": 0.6, "residual_sd": 0.5}}})";
    const auto c = parse_synthetic_config(text);
    CHECK(c.seed == 11);
    CHECK(c.wording == WordingMode::kEmbeddedDigit);
    CHECK(c.items.at({"T", 1}).residual_sd == doctest::Approx(0.6));
    CHECK(c.items.at({"T", 3}).factor == 1);
    CHECK_THROWS_WITH_AS(parse_synthetic_config(R"({"factors": ["F"], "factor_covariance": [[1]],
                                                    "items": {"T_1": {"factor": "G", "loading": 1}}})"),
                         doctest::Contains("unknown factor"), Error);
  }

  TEST_CASE("builder negates reverse-keyed loadings") {
    const auto inst = bfi();
    const auto c = synthetic_config({inst}, {.loading = 0.8, .seed = 3});
    CHECK(c.factors.size() == inst.subscales.size());
    for (const auto& item : inst.items) {
      const auto& s = c.items.at({inst.id, item.index});
      CHECK(s.loading == doctest::Approx(item.reverse_keyed ? -0.8 : 0.8));
      CHECK(s.residual_sd == doctest::Approx(0.6));
      CHECK(c.factors[s.factor] == "BFI:" + item.subscale_id);
    }
  }

  TEST_CASE("loadings of .8 give a reliable subscale") {
    const auto inst = bfi();
    const auto c = synthetic_config({inst}, {.loading = 0.8, .seed = 20240601});
    const double alpha = cronbach_alpha(covariance_matrix(simulate_subscale(c, inst, "E", 1000)));
    CHECK(alpha >= 0.75);
    // population alpha of 8 such items after discretization
    CHECK(std::abs(alpha - 0.9186080567648207) < 0.03);
  }

  TEST_CASE("zero loadings give alpha near zero") {
    const auto inst = bfi();
    const auto c = synthetic_config({inst}, {.loading = 0.0, .seed = 20240602});
    const double alpha = cronbach_alpha(covariance_matrix(simulate_subscale(c, inst, "E", 1000)));
    CHECK(std::abs(alpha) < 0.1);
  }

  TEST_CASE("item correlations converge to the generating model") {
    const auto c = two_factor_config(99);
    const int n = 10000;
    Eigen::MatrixXd v(n, 4);
    for (int p = 0; p < n; ++p) {
      for (int k = 0; k < 4; ++k) v(p, k) = synthetic_value(c, "p" + std::to_string(p), {"T", k + 1});
    }
    const Eigen::MatrixXd cov = covariance_matrix(testsupport::to_table(v)).values;
    const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
    const Eigen::MatrixXd r = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
    // Pearson correlations of the thresholded variables, by bivariate normal integration
    Eigen::Matrix4d expected;
    expected << 1.000000, -0.511623, 0.175029, 0.141818,
               -0.511623, 1.000000, -0.153141, -0.124085,
                0.175029, -0.153141, 1.000000, 0.266045,
                0.141818, -0.124085, 0.266045, 1.000000;
    CHECK((r - expected).cwiseAbs().maxCoeff() < 0.03);
  }

  TEST_CASE("wording modes") {
    const auto inst = bfi();
    auto c = synthetic_config({inst}, {.loading = 0.5, .seed = 5});
    auto embedded = c;
    embedded.wording = WordingMode::kEmbeddedDigit;
    auto sparse = c;
    sparse.wording = WordingMode::kNoDigitFraction;
    sparse.no_digit_fraction = 0.3;
    int no_digit = 0, total = 0;
    for (int p = 0; p < 100; ++p) {
      for (int i = 1; i <= 20; ++i) {
        const auto job = job_for("p" + std::to_string(p), "BFI", i);
        const auto bare = synthetic_respond(job, c).text;
        REQUIRE(bare.size() == 1);
        const auto wordy = synthetic_respond(job, embedded).text;
        CHECK(wordy.size() > 1);
        CHECK(parse_response(wordy, inst.range).value == std::stoi(bare));
        const auto maybe = parse_response(synthetic_respond(job, sparse).text, inst.range);
        if (maybe.value) {
          CHECK(*maybe.value == std::stoi(bare));
        } else {
          ++no_digit;
        }
        ++total;
      }
    }
    // binomial sd is about .01 at 2000 draws
    CHECK(static_cast<double>(no_digit) / total == doctest::Approx(0.3).epsilon(0.15));
  }

  TEST_CASE("administer with the synthetic respondent") {
    SyntheticRespondent r(two_factor_config(3));
    std::vector<PromptJob> jobs;
    for (int p = 0; p < 20; ++p) {
      for (int i = 1; i <= 4; ++i) jobs.push_back(job_for("p" + std::to_string(p), "T", i));
    }
    std::size_t sink = 0;
    AdministerOptions o;
    o.limits.max_in_flight = 4;
    o.on_response = [&](const RawResponse&) { ++sink; };
    AdministerStats stats;
    const auto out = administer(jobs, r, o, &stats);
    REQUIRE(out.size() == jobs.size());
    CHECK(sink == jobs.size());
    CHECK(stats.remote_calls == 0);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      CHECK(out[i].job_id == jobs[i].job_id);
      CHECK(out[i].respondent == RespondentKind::kSynthetic);
      CHECK(out[i].text == synthetic_respond(jobs[i], r.config()).text);
    }
    jobs.push_back(job_for("p0", "T", 7));
    CHECK_THROWS_WITH_AS(administer(jobs, r, o), doctest::Contains("UnknownItem"), Error);
  }
}

TEST_SUITE("gateway") {
  TEST_CASE("request body carries the model configuration") {
    FakeEndpoint ep;
    auto job = job_for("p1", "BFI", 1, "Rate yourself.");
    job.model_config = {"gpt-4", 0.0, 50};
    const auto out = administer({job}, fake_respondent(ep), fast_options());
    REQUIRE(ep.bodies.size() == 1);
    const json& b = ep.bodies[0];
    CHECK(b["model"] == "gpt-4");
    CHECK(b["temperature"].get<double>() == 0.0);
    CHECK(b["max_tokens"].get<int>() == 50);
    CHECK(b["messages"].size() == 1);
    CHECK(b["messages"][0]["role"] == "user");
    CHECK(b["messages"][0]["content"] == "Rate yourself.");
    REQUIRE(out.size() == 1);
    CHECK(out[0].ok);
    CHECK(out[0].text == " 4\n");  // verbatim
    CHECK(out[0].attempt == 1);
    CHECK(out[0].created_at == "2023-11-14T22:13:20Z");
    CHECK(out[0].respondent == RespondentKind::kEndpoint);
  }

  TEST_CASE("second run is served from the cache") {
    FakeEndpoint ep;
    const auto dir = temp_dir("cache_rerun");
    auto o = fast_options();
    o.cache_dir = dir;
    const auto jobs = numbered_jobs(10);
    const auto r = fake_respondent(ep);
    AdministerStats first, second;
    const auto a = administer(jobs, r, o, &first);
    CHECK(ep.calls == 10);
    CHECK(first.remote_calls == 10);
    const auto b = administer(jobs, r, o, &second);
    CHECK(ep.calls == 10);
    CHECK(second.remote_calls == 0);
    CHECK(second.cache_hits == 10);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      CHECK(b[i].cached);
      CHECK(b[i].text == a[i].text);
      CHECK(b[i].created_at == a[i].created_at);
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("transient failures are retried") {
    FakeEndpoint ep;
    ep.fail_first = 2;
    auto o = fast_options();
    o.limits.max_retries = 3;
    AdministerStats stats;
    const auto out = administer({job_for("p1", "BFI", 1)}, fake_respondent(ep), o, &stats);
    REQUIRE(out.size() == 1);
    CHECK(out[0].ok);
    CHECK(out[0].attempt == 3);
    CHECK(ep.calls == 3);
    CHECK(stats.retries == 2);
  }

  TEST_CASE("exhausted retries become failure records") {
    FakeEndpoint ep;
    ep.status_always = 503;
    auto o = fast_options();
    o.limits.max_retries = 2;
    const auto out = administer(numbered_jobs(3), fake_respondent(ep), o);
    REQUIRE(out.size() == 3);
    for (const auto& r : out) {
      CHECK_FALSE(r.ok);
      CHECK(r.failure_reason == "http_503");
      CHECK(r.attempt == 3);
    }
    CHECK(ep.calls == 9);
  }

  TEST_CASE("client errors are not retried and not cached") {
    FakeEndpoint ep;
    ep.status_always = 400;
    const auto dir = temp_dir("cache_400");
    auto o = fast_options();
    o.cache_dir = dir;
    const auto out = administer(numbered_jobs(2), fake_respondent(ep), o);
    CHECK(ep.calls == 2);
    CHECK(out[0].failure_reason == "http_400");
    CHECK(out[0].attempt == 1);
    administer(numbered_jobs(2), fake_respondent(ep), o);
    CHECK(ep.calls == 4);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("concurrency never exceeds max_in_flight") {
    FakeEndpoint ep;
    ep.delay = std::chrono::milliseconds(30);
    auto o = fast_options();
    o.limits.max_in_flight = 3;
    administer(numbered_jobs(15), fake_respondent(ep), o);
    CHECK(ep.calls == 15);
    CHECK(ep.max_in_flight <= 3);
    CHECK(ep.max_in_flight >= 2);
  }

  TEST_CASE("request rate stays under the limit") {
    FakeEndpoint ep;
    auto o = fast_options();
    o.limits.max_in_flight = 8;
    o.limits.requests_per_second = 40.0;
    administer(numbered_jobs(21), fake_respondent(ep), o);
    REQUIRE(ep.arrivals.size() == 21);
    auto t = ep.arrivals;
    std::sort(t.begin(), t.end());
    const double span = std::chrono::duration<double>(t.back() - t.front()).count();
    // 20 gaps of 25 ms; allow a little scheduling jitter
    CHECK(span >= 0.5 * 0.95);
    // no window of one second holds more than rate + 1 requests
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::size_t j = i;
      while (j < t.size() && t[j] - t[i] < std::chrono::milliseconds(250)) ++j;
      CHECK(j - i <= 11);
    }
  }

  TEST_CASE("unreachable endpoint") {
    std::string url;
    {
      FakeEndpoint ep;
      url = ep.url();
    }
    EndpointConfig c;
    c.url = url;
    c.api_key = "k";
    c.timeout = std::chrono::seconds(1);
    auto o = fast_options();
    o.limits.max_retries = 1;
    CHECK_THROWS_WITH_AS(administer(numbered_jobs(2), EndpointRespondent(c), o),
                         doctest::Contains("EndpointUnreachable"), Error);
  }

  TEST_CASE("missing API key") {
    ::unsetenv(kApiKeyVariable);
    CHECK_THROWS_WITH_AS(endpoint_config_from_env(), doctest::Contains("AuthMissing"), Error);
    ::setenv(kApiKeyVariable, "abc", 1);
    CHECK(endpoint_config_from_env().api_key == "abc");
    ::unsetenv(kApiKeyVariable);
    EndpointConfig c;
    CHECK_THROWS_WITH_AS(EndpointRespondent{c}, doctest::Contains("AuthMissing"), Error);
    c.api_key = "k";
    c.url = "ftp://example.org";
    CHECK_THROWS_WITH_AS(EndpointRespondent{c}, doctest::Contains("ConfigInvalid"), Error);
  }
}

TEST_SUITE("cache") {
  TEST_CASE("round trip and corruption") {
    const auto dir = temp_dir("cache_unit");
    ResponseCache cache(dir);
    const std::string key = request_key("prompt", {"gpt-4", 0.0, 200});
    CHECK_FALSE(cache.get(key));
    cache.put({key, "  3 \n", "2024-01-01T00:00:00Z"});
    CHECK(cache.path_for(key) == dir / key.substr(0, 2) / (key + ".json"));
    const auto e = cache.get(key);
    REQUIRE(e);
    CHECK(e->text == "  3 \n");
    CHECK(e->created_at == "2024-01-01T00:00:00Z");
    // no temp files left behind
    CHECK(std::distance(std::filesystem::directory_iterator(dir / key.substr(0, 2)),
                        std::filesystem::directory_iterator()) == 1);

    json j = json::parse(std::ifstream(cache.path_for(key)));
    j["text"] = "4";
    std::ofstream(cache.path_for(key)) << j.dump();
    CHECK_THROWS_WITH_AS(cache.get(key), doctest::Contains("CacheCorrupt"), Error);

    std::ofstream(cache.path_for(key)) << "{not json";
    CHECK_THROWS_WITH_AS(cache.get(key), doctest::Contains("CacheCorrupt"), Error);

    const std::string other = request_key("other", {"gpt-4", 0.0, 200});
    cache.put({other, "1", std::nullopt});
    std::filesystem::create_directories(cache.path_for(key).parent_path());
    std::filesystem::copy_file(cache.path_for(other), cache.path_for(key),
                               std::filesystem::copy_options::overwrite_existing);
    CHECK_THROWS_WITH_AS(cache.get(key), doctest::Contains("holds key"), Error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("corrupt entry stops administer") {
    FakeEndpoint ep;
    const auto dir = temp_dir("cache_corrupt_run");
    auto o = fast_options();
    o.cache_dir = dir;
    const auto jobs = numbered_jobs(3);
    administer(jobs, fake_respondent(ep), o);
    ResponseCache cache(dir);
    const auto path = cache.path_for(request_key(jobs[1].prompt_text, jobs[1].model_config));
    std::ofstream(path) << R"({"key": "x", "text": "1", "digest": "0"})";
    CHECK_THROWS_WITH_AS(administer(jobs, fake_respondent(ep), o), doctest::Contains("CacheCorrupt"),
                         Error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("distinct requests never share a cache path") {
    ResponseCache cache("/cache");
    std::unordered_set<std::string> paths;
    const int n = 1000000;
    paths.reserve(n);
    const ModelConfig models[] = {{"gpt-3.5-turbo", 0.0, 50}, {"gpt-4", 0.0, 200}};
    for (int i = 0; i < n; ++i) {
      // the same prompt under two models is two requests
      const std::string prompt = "prompt " + std::to_string(i / 2);
      paths.insert(cache.path_for(request_key(prompt, models[i % 2])).string());
    }
    CHECK(paths.size() == static_cast<std::size_t>(n));
  }
}

TEST_SUITE("replay") {
  TEST_CASE("archive matching") {
    const auto dir = temp_dir("replay");
    const auto jobs = numbered_jobs(10);
    const auto path = dir / "responses.jsonl";
    {
      std::ofstream out(path);
      for (std::size_t i = 3; i < jobs.size(); ++i) {
        RawResponse r;
        r.job_id = jobs[i].job_id;
        r.text = "answer " + std::to_string(i % 5 + 1);
        r.respondent = RespondentKind::kEndpoint;
        r.attempt = 2;
        write_response_jsonl(out, r, "run-7");
      }
      for (int extra = 0; extra < 2; ++extra) {
        RawResponse r;
        r.job_id = "stray-" + std::to_string(extra);
        r.text = "1";
        write_response_jsonl(out, r, "run-7");
      }
    }
    const auto res = replay(jobs, path);
    CHECK(res.run_id == "run-7");
    CHECK(res.matched == 7);
    CHECK(res.missing == 3);
    CHECK(res.extra == 2);
    REQUIRE(res.responses.size() == 10);
    for (int i = 0; i < 3; ++i) {
      CHECK_FALSE(res.responses[static_cast<std::size_t>(i)].ok);
      CHECK(res.responses[static_cast<std::size_t>(i)].failure_reason == "missing_in_archive");
    }
    CHECK(res.responses[4].text == "answer 5");
    CHECK(res.responses[4].attempt == 2);

    const auto full = replay(std::vector<PromptJob>(jobs.begin() + 3, jobs.end()), path);
    CHECK(full.matched == 7);
    CHECK(full.missing == 0);

    std::ofstream(dir / "bad.jsonl") << "{\"job_id\": \n";
    CHECK_THROWS_WITH_AS(replay(jobs, dir / "bad.jsonl"), doctest::Contains("MalformedFile"), Error);
    CHECK_THROWS_AS(replay(jobs, dir / "absent.jsonl"), Error);
    std::filesystem::remove_all(dir);
  }
}
