#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychoprobe/digest.hpp"
#include "psychoprobe/error.hpp"
#include "psychoprobe/respondent.hpp"
#include "psychoprobe/scores.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;

std::uint64_t stream_seed(std::string_view material) {
  return std::stoull(sha256_hex(material).substr(0, 16), nullptr, 16);
}

std::mt19937_64 persona_stream(std::uint64_t seed, std::string_view persona_id) {
  return std::mt19937_64(stream_seed("latent|" + std::to_string(seed) + "|" + std::string(persona_id)));
}

std::mt19937_64 item_stream(std::uint64_t seed, std::string_view persona_id, const ItemRef& item) {
  return std::mt19937_64(stream_seed("item|" + std::to_string(seed) + "|" + std::string(persona_id) +
                                     "|" + item.instrument_id + "|" +
                                     std::to_string(item.item_index)));
}

const char* const kEmbedded[] = {
    "I would answer %.",
    "My answer is %.",
    "I'd go with %.",
    "For this statement I choose %.",
};

const char* const kNoDigit[] = {
    "I'm not sure how to answer that.",
    "That depends on the situation.",
    "I would rather not say.",
};

std::string render(int value, double u, WordingMode mode, double p) {
  const std::string digit = std::to_string(value);
  switch (mode) {
    case WordingMode::kBareDigit:
      return digit;
    case WordingMode::kEmbeddedDigit: {
      std::string t = kEmbedded[static_cast<std::size_t>(u * 4.0) % 4];
      t.replace(t.find('%'), 1, digit);
      return t;
    }
    case WordingMode::kNoDigitFraction:
      if (u < p) return kNoDigit[static_cast<std::size_t>(u / p * 3.0) % 3];
      return digit;
  }
  return digit;
}

}  // namespace

std::string_view wording_mode_name(WordingMode mode) {
  switch (mode) {
    case WordingMode::kBareDigit: return "bare-digit";
    case WordingMode::kEmbeddedDigit: return "embedded-digit";
    case WordingMode::kNoDigitFraction: return "no-digit-fraction";
  }
  return "unknown";
}

WordingMode parse_wording_mode(std::string_view name) {
  if (name == "bare-digit") return WordingMode::kBareDigit;
  if (name == "embedded-digit") return WordingMode::kEmbeddedDigit;
  if (name == "no-digit-fraction") return WordingMode::kNoDigitFraction;
  throw Error(ErrorCode::kConfigInvalid, "unknown wording mode '" + std::string(name) + "'");
}

void SyntheticRespondentConfig::validate() const {
  const auto m = static_cast<Eigen::Index>(factors.size());
  if (m == 0) throw Error(ErrorCode::kConfigInvalid, "no factors");
  if (factor_covariance.rows() != m || factor_covariance.cols() != m) {
    throw Error(ErrorCode::kConfigInvalid, "factor covariance must be " + std::to_string(m) + " x " +
                                               std::to_string(m));
  }
  if (!factor_covariance.isApprox(factor_covariance.transpose(), 1e-12)) {
    throw Error(ErrorCode::kConfigInvalid, "factor covariance is not symmetric");
  }
  if (factor_covariance.llt().info() != Eigen::Success) {
    throw Error(ErrorCode::kConfigInvalid, "factor covariance is not positive definite");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) {
      throw Error(ErrorCode::kConfigInvalid, "thresholds must be strictly increasing");
    }
  }
  if (!(no_digit_fraction >= 0.0 && no_digit_fraction <= 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "no-digit fraction must lie in [0, 1]");
  }
  for (const auto& [ref, it] : items) {
    if (it.factor >= factors.size()) {
      throw Error(ErrorCode::kConfigInvalid, ref.label() + " names factor " + std::to_string(it.factor));
    }
    if (!(it.residual_sd >= 0.0) || !std::isfinite(it.loading)) {
      throw Error(ErrorCode::kConfigInvalid, ref.label() + " has an invalid loading or residual sd");
    }
  }
}

SyntheticRespondentConfig synthetic_config(const std::vector<Instrument>& instruments,
                                           const SyntheticSpec& spec) {
  if (std::abs(spec.loading) > 1.0) {
    throw Error(ErrorCode::kConfigInvalid, "loading magnitude above 1 leaves no residual variance");
  }
  SyntheticRespondentConfig c;
  c.thresholds = spec.thresholds;
  c.wording = spec.wording;
  c.no_digit_fraction = spec.no_digit_fraction;
  c.seed = spec.seed;
  std::vector<std::size_t> owner;  // instrument index per factor
  for (std::size_t k = 0; k < instruments.size(); ++k) {
    const auto& inst = instruments[k];
    for (const auto& sub : inst.subscales) {
      const std::size_t f = c.factors.size();
      c.factors.push_back(subscale_key(inst.id, sub.id));
      owner.push_back(k);
      for (int idx : sub.item_indices) {
        const double l = inst.item(idx).reverse_keyed ? -spec.loading : spec.loading;
        c.items[{inst.id, idx}] = {f, l, std::sqrt(1.0 - spec.loading * spec.loading)};
      }
    }
  }
  const auto m = static_cast<Eigen::Index>(c.factors.size());
  c.factor_covariance = Eigen::MatrixXd::Identity(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      if (a != b && owner[static_cast<std::size_t>(a)] == owner[static_cast<std::size_t>(b)]) {
        c.factor_covariance(a, b) = spec.factor_correlation;
      }
    }
  }
  c.validate();
  return c;
}

SyntheticRespondentConfig parse_synthetic_config(std::string_view json_text) {
  SyntheticRespondentConfig c;
  try {
    const json j = json::parse(json_text);
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("thresholds")) {
      const auto t = j.at("thresholds").get<std::vector<double>>();
      if (t.size() != 4) throw Error(ErrorCode::kConfigInvalid, "expected 4 thresholds");
      std::copy(t.begin(), t.end(), c.thresholds.begin());
    }
    c.wording = parse_wording_mode(j.value("wording", std::string("bare-digit")));
    c.no_digit_fraction = j.value("no_digit_fraction", 0.0);
    c.factors = j.at("factors").get<std::vector<std::string>>();
    const auto m = static_cast<Eigen::Index>(c.factors.size());
    const auto rows = j.at("factor_covariance").get<std::vector<std::vector<double>>>();
    if (static_cast<Eigen::Index>(rows.size()) != m) {
      throw Error(ErrorCode::kConfigInvalid, "factor covariance must have one row per factor");
    }
    c.factor_covariance.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const auto& row = rows[static_cast<std::size_t>(a)];
      if (static_cast<Eigen::Index>(row.size()) != m) {
        throw Error(ErrorCode::kConfigInvalid, "factor covariance must be square");
      }
      for (Eigen::Index b = 0; b < m; ++b) c.factor_covariance(a, b) = row[static_cast<std::size_t>(b)];
    }
    for (const auto& [label, spec] : j.at("items").items()) {
      const std::string factor = spec.at("factor").get<std::string>();
      auto it = std::find(c.factors.begin(), c.factors.end(), factor);
      if (it == c.factors.end()) {
        throw Error(ErrorCode::kConfigInvalid, label + " names unknown factor '" + factor + "'");
      }
      SyntheticItem item;
      item.factor = static_cast<std::size_t>(it - c.factors.begin());
      item.loading = spec.at("loading").get<double>();
      item.residual_sd = spec.value("residual_sd", std::sqrt(std::max(0.0, 1.0 - item.loading * item.loading)));
      c.items[parse_item_label(label)] = item;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigInvalid, std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

SyntheticRespondentConfig load_synthetic_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_config(ss.str());
}

Eigen::VectorXd synthetic_latent(const SyntheticRespondentConfig& config,
                                 std::string_view persona_id) {
  auto rng = persona_stream(config.seed, persona_id);
  std::normal_distribution<double> z;
  Eigen::VectorXd draw(config.factor_covariance.rows());
  for (Eigen::Index i = 0; i < draw.size(); ++i) draw(i) = z(rng);
  const Eigen::MatrixXd l = config.factor_covariance.llt().matrixL();
  return l * draw;
}

namespace {

struct Draw {
  int value;
  double u;  // uniform draw for the wording
};

Draw draw_item(const SyntheticRespondentConfig& config, const Eigen::VectorXd& latent,
               std::string_view persona_id, const ItemRef& ref) {
  auto it = config.items.find(ref);
  if (it == config.items.end()) {
    throw Error(ErrorCode::kUnknownItem, ref.label() + " has no loading in the synthetic config");
  }
  auto rng = item_stream(config.seed, persona_id, ref);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double y = it->second.loading * latent(static_cast<Eigen::Index>(it->second.factor)) +
                   it->second.residual_sd * z(rng);
  int value = 1;
  for (double t : config.thresholds) {
    if (y > t) ++value;
  }
  return {value, unif(rng)};
}

}  // namespace

int synthetic_value(const SyntheticRespondentConfig& config, std::string_view persona_id,
                    const ItemRef& item) {
  return draw_item(config, synthetic_latent(config, persona_id), persona_id, item).value;
}

RawResponse synthetic_respond(const PromptJob& job, const SyntheticRespondentConfig& config) {
  const ItemRef ref{job.instrument_id, job.item_index};
  const Draw d = draw_item(config, synthetic_latent(config, job.persona_id), job.persona_id, ref);
  RawResponse r;
  r.job_id = job.job_id;
  r.respondent = RespondentKind::kSynthetic;
  r.text = render(d.value, d.u, config.wording, config.no_digit_fraction);
  return r;
}

SyntheticRespondent::SyntheticRespondent(SyntheticRespondentConfig config)
    : config_(std::move(config)) {
  config_.validate();
}

Attempt SyntheticRespondent::attempt(const PromptJob& job) const {
  Attempt a;
  a.text = synthetic_respond(job, config_).text;
  return a;
}

}  // namespace psychoprobe
