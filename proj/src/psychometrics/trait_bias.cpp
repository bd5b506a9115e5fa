#include "psychoprobe/psychometrics/trait_bias.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = kMissing;
  sd = kMissing;
  if (v.empty()) return;
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::map<std::string, Eigen::Index> index_of(const std::vector<std::string>& ids,
                                             const char* what) {
  std::map<std::string, Eigen::Index> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!out.emplace(ids[i], static_cast<Eigen::Index>(i)).second) {
      throw Error(ErrorCode::kAlignmentMismatch, std::string("duplicate ") + what + " '" + ids[i] + "'");
    }
  }
  return out;
}

std::vector<double> present(const Eigen::VectorXd& v) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!is_missing(v(i))) out.push_back(v(i));
  }
  return out;
}

}  // namespace

TraitBiasReport trait_bias(const DataTable& human, const DataTable& llm) {
  if (human.row_ids.size() != llm.row_ids.size() || human.labels.size() != llm.labels.size()) {
    throw Error(ErrorCode::kAlignmentMismatch, "score tables differ in personas or traits");
  }
  const auto llm_rows = index_of(llm.row_ids, "persona");
  const auto llm_cols = index_of(llm.labels, "trait");
  index_of(human.row_ids, "persona");
  index_of(human.labels, "trait");

  TraitBiasReport out;
  out.persona_ids = human.row_ids;
  out.traits = human.labels;
  const Eigen::Index n = human.rows(), k = human.cols();
  out.bias.resize(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto lc = llm_cols.find(human.labels[static_cast<std::size_t>(c)]);
    if (lc == llm_cols.end()) {
      throw Error(ErrorCode::kAlignmentMismatch,
                  "trait '" + human.labels[static_cast<std::size_t>(c)] + "' missing from llm scores");
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto lr = llm_rows.find(human.row_ids[static_cast<std::size_t>(r)]);
      if (lr == llm_rows.end()) {
        throw Error(ErrorCode::kAlignmentMismatch, "persona '" +
                                                       human.row_ids[static_cast<std::size_t>(r)] +
                                                       "' missing from llm scores");
      }
      const double h = human.values(r, c), l = llm.values(lr->second, lc->second);
      out.bias(r, c) = is_missing(h) || is_missing(l) ? kMissing : std::abs(l - h);
    }
  }

  out.trait_mean.resize(k);
  out.trait_sd.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    mean_sd(present(out.bias.col(c)), out.trait_mean(c), out.trait_sd(c));
  }
  out.persona_mean.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    double m = 0, sd = 0;
    mean_sd(present(out.bias.row(r).transpose()), m, sd);
    out.persona_mean(r) = m;
  }
  const auto defined = present(out.persona_mean);
  out.n_personas = defined.size();
  mean_sd(defined, out.grand_mean, out.grand_sd);
  return out;
}

std::string format_mean_sd(double mean, double sd) {
  return "M=" + apa_number(mean) + " (SD=" + apa_number(sd) + ")";
}

std::vector<TraitBiasComparison> compare_trait_bias(const TraitBiasReport& a,
                                                    const TraitBiasReport& b) {
  std::vector<TraitBiasComparison> out;
  for (std::size_t c = 0; c < a.traits.size(); ++c) {
    auto it = std::find(b.traits.begin(), b.traits.end(), a.traits[c]);
    if (it == b.traits.end()) {
      throw Error(ErrorCode::kAlignmentMismatch, "trait '" + a.traits[c] + "' missing from comparison");
    }
    const Eigen::VectorXd ca = a.bias.col(static_cast<Eigen::Index>(c));
    const Eigen::VectorXd cb = b.bias.col(it - b.traits.begin());
    out.push_back({a.traits[c], welch_t_test(std::vector<double>(ca.begin(), ca.end()),
                                             std::vector<double>(cb.begin(), cb.end()))});
  }
  out.push_back({"overall",
                 welch_t_test(std::vector<double>(a.persona_mean.begin(), a.persona_mean.end()),
                              std::vector<double>(b.persona_mean.begin(), b.persona_mean.end()))});
  return out;
}

DataTable encode_demographics(const std::vector<SiliconRecord>& records,
                              const SiliconTemplates& templates) {
  DataTable out;
  for (const auto& rec : records) out.row_ids.push_back(rec.persona_id());
  std::vector<Eigen::VectorXd> columns;
  const auto n = static_cast<Eigen::Index>(records.size());

  auto cell = [](const SiliconRecord& rec, const std::string& name) -> const std::string* {
    auto it = rec.fields.find(name);
    return it == rec.fields.end() || it->second.empty() ? nullptr : &it->second;
  };

  for (const auto& f : templates.fields) {
    using E = FieldTemplate::Encoding;
    if (f.encoding == E::kNominal) {
      std::set<std::string> seen;
      for (const auto& rec : records) {
        if (const auto* v = cell(rec, f.name)) seen.insert(*v);
      }
      // listed values first in template order, then open-ended extras sorted
      std::vector<std::string> order;
      for (const auto& v : f.values) {
        if (seen.count(v)) order.push_back(v);
      }
      for (const auto& v : seen) {
        if (std::find(f.values.begin(), f.values.end(), v) == f.values.end()) order.push_back(v);
      }
      for (const auto& level : order) {
        Eigen::VectorXd col(n);
        for (Eigen::Index r = 0; r < n; ++r) {
          const auto* v = cell(records[static_cast<std::size_t>(r)], f.name);
          col(r) = v ? (*v == level ? 1.0 : 0.0) : kMissing;
        }
        out.labels.push_back(f.name + "=" + level);
        columns.push_back(std::move(col));
      }
      continue;
    }
    Eigen::VectorXd col(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto* v = cell(records[static_cast<std::size_t>(r)], f.name);
      if (!v) {
        col(r) = kMissing;
        continue;
      }
      if (f.encoding == E::kNumeric) {
        col(r) = std::stod(*v);
      } else {
        auto it = std::find(f.values.begin(), f.values.end(), *v);
        if (it == f.values.end()) {
          throw Error(ErrorCode::kInvalidFieldValue, f.name + " value '" + *v + "' is not listed");
        }
        const auto idx = static_cast<double>(it - f.values.begin());
        col(r) = f.encoding == E::kOrdinal ? idx : (idx == 1.0 ? 1.0 : 0.0);
      }
    }
    out.labels.push_back(f.encoding == E::kBinary && f.values.size() > 1 ? f.name + "=" + f.values[1]
                                                                          : f.name);
    columns.push_back(std::move(col));
  }

  out.values.resize(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out.values.col(static_cast<Eigen::Index>(c)) = columns[c];
  }
  return out;
}

std::vector<BiasCorrelate> bias_correlates(const std::vector<std::string>& persona_ids,
                                           const Eigen::VectorXd& bias,
                                           const DataTable& covariates) {
  if (static_cast<Eigen::Index>(persona_ids.size()) != bias.size()) {
    throw Error(ErrorCode::kAlignmentMismatch, "bias vector and persona ids differ in length");
  }
  const auto rows = index_of(covariates.row_ids, "persona");
  std::vector<Eigen::Index> map;
  for (const auto& id : persona_ids) {
    auto it = rows.find(id);
    if (it == rows.end()) {
      throw Error(ErrorCode::kAlignmentMismatch, "no covariates for persona '" + id + "'");
    }
    map.push_back(it->second);
  }
  std::vector<BiasCorrelate> out;
  for (Eigen::Index c = 0; c < covariates.cols(); ++c) {
    Eigen::VectorXd x(bias.size());
    for (Eigen::Index i = 0; i < bias.size(); ++i) {
      x(i) = covariates.values(map[static_cast<std::size_t>(i)], c);
    }
    const Correlation corr = pearson(bias, x);
    out.push_back({covariates.labels[static_cast<std::size_t>(c)], corr.r, corr.n_pairs,
                   corr.r ? "" : "undefined: " + corr.note});
  }
  return out;
}

}  // namespace psychoprobe
