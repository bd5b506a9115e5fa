#include "psychoprobe/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "psychoprobe/csv.hpp"
#include "psychoprobe/error.hpp"
#include "psychoprobe/psychometrics/covariance.hpp"
#include "psychoprobe/psychometrics/reliability.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
std::string cell(double v) { return std::isfinite(v) ? format_double(v) : ""; }

std::optional<double> json_opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

std::string apa_or(const json& j, const char* key, const std::string& missing = "-") {
  const auto v = json_opt(j, key);
  return v ? apa_number(*v) : missing;
}

std::vector<std::string> labels_of(const Instrument& inst, const std::vector<int>& indices) {
  std::vector<std::string> out;
  for (int i : indices) out.push_back(ItemRef{inst.id, i}.label());
  return out;
}

// "BFI:E" -> "E" when the column belongs to `instrument`.
bool belongs_to(const std::string& key, const std::string& instrument) {
  return key.size() > instrument.size() && key.compare(0, instrument.size(), instrument) == 0 &&
         key[instrument.size()] == ':';
}

std::string missing_name(MissingData m) { return missing_data_name(m); }

}  // namespace

HumanReference human_reference(const std::vector<SiliconRecord>& records,
                               const SiliconTemplates& templates) {
  HumanReference out;
  out.demographics = encode_demographics(records, templates);
  auto& t = out.traits;
  for (const auto& name : templates.traits) {
    std::string label = name;
    if (auto us = name.find('_'); us != std::string::npos) {
      std::string inst = name.substr(0, us), sub = name.substr(us + 1);
      for (auto& c : inst) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      for (auto& c : sub) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      label = subscale_key(inst, sub);
    }
    t.labels.push_back(label);
  }
  t.values.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(t.labels.size()));
  for (std::size_t r = 0; r < records.size(); ++r) {
    t.row_ids.push_back(records[r].persona_id());
    for (std::size_t c = 0; c < templates.traits.size(); ++c) {
      auto it = records[r].traits.find(templates.traits[c]);
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          it == records[r].traits.end() ? kMissing : it->second;
    }
  }
  return out;
}

DataTable keyed_items(const ResponseMatrix& matrix, const Instrument& instrument) {
  DataTable out;
  out.row_ids = matrix.persona_ids;
  const auto n = static_cast<Eigen::Index>(matrix.rows());
  out.values.resize(n, static_cast<Eigen::Index>(instrument.items.size()));
  for (std::size_t k = 0; k < instrument.items.size(); ++k) {
    const auto& item = instrument.items[k];
    const ItemRef ref{instrument.id, item.index};
    out.labels.push_back(ref.label());
    const auto col = matrix.column_index(ref);
    for (Eigen::Index r = 0; r < n; ++r) {
      double v = kMissing;
      if (col) {
        if (const auto& x = matrix.at(static_cast<std::size_t>(r), *col)) {
          v = item.reverse_keyed ? reverse_key(*x, instrument.range) : *x;
        }
      }
      out.values(r, static_cast<Eigen::Index>(k)) = v;
    }
  }
  return out;
}

ReliabilityRow subscale_reliability(const DataTable& keyed, const Instrument& instrument,
                                    const Subscale& subscale, const AnalysisOptions& options) {
  ReliabilityRow row;
  row.instrument = instrument.id;
  row.subscale = subscale.id;
  row.n_items = subscale.item_indices.size();
  CovarianceMatrix cov;
  try {
    cov = covariance_matrix(keyed.select_columns(labels_of(instrument, subscale.item_indices)),
                            options.reliability_missing);
  } catch (const Error& e) {
    row.notes.push_back(e.what());
    return row;
  }
  row.n_personas = cov.n;
  row.zero_variance_items = cov.zero_variance;
  auto attempt = [&](const char* name, auto&& fn, std::optional<double>& slot) {
    try {
      slot = fn();
    } catch (const Error& e) {
      row.notes.push_back(std::string(name) + ": " + e.what());
    }
  };
  attempt("alpha", [&] { return cronbach_alpha(cov); }, row.alpha);
  attempt("omega", [&] { return mcdonald_omega(cov); }, row.omega);
  attempt("glb", [&] { return greatest_lower_bound(cov); }, row.glb);
  row.below_threshold = !row.alpha || *row.alpha < options.threshold;
  return row;
}

InstrumentCfa instrument_cfa(const DataTable& keyed, const Instrument& instrument,
                             const AnalysisOptions& options) {
  InstrumentCfa out;
  out.instrument = instrument.id;
  CfaSpec spec;
  for (const auto& sub : instrument.subscales) spec.factors.push_back(sub.id);
  for (const auto& item : instrument.items) {
    spec.add_item(ItemRef{instrument.id, item.index}.label(), item.subscale_id);
  }
  try {
    out.result = fit_cfa(keyed, spec, options.cfa);
  } catch (const Error& e) {
    out.failure = e.what();
    return out;
  }
  const CfaResult& res = *out.result;
  if (!res.converged) {
    out.failure = res.failure;
    return out;
  }
  try {
    out.fit = fit_indices(res, res.sample, res.n);
  } catch (const Error& e) {
    out.notes.push_back(std::string("fit indices: ") + e.what());
  }
  if (options.robust_se) {
    try {
      out.estimates = robust_standard_errors(res, keyed);
    } catch (const Error& e) {
      out.notes.push_back(std::string("standard errors: ") + e.what());
    }
  }
  return out;
}

AnalysisReport analyze(const ResponseMatrix& matrix, const ScoreTable& scores,
                       const std::vector<Instrument>& instruments, const AnalysisOptions& options,
                       const HumanReference* human, const ScoreTable* comparison) {
  if (!scores.run_id.empty() && !matrix.run_id.empty() && scores.run_id != matrix.run_id) {
    throw Error(ErrorCode::kRunMismatch,
                "matrix run " + matrix.run_id + " but scores run " + scores.run_id);
  }
  AnalysisReport rep;
  rep.run_id = matrix.run_id;
  rep.options = options;
  rep.n_personas = matrix.rows();

  std::vector<DataTable> keyed;
  for (const auto& inst : instruments) keyed.push_back(keyed_items(matrix, inst));

  // instruments are independent; each CFA is single-threaded and seeded
  std::vector<std::future<InstrumentCfa>> cfa_jobs;
  for (std::size_t k = 0; k < instruments.size(); ++k) {
    cfa_jobs.push_back(std::async(std::launch::async, [&, k] {
      return instrument_cfa(keyed[k], instruments[k], options);
    }));
  }
  for (std::size_t k = 0; k < instruments.size(); ++k) {
    for (const auto& sub : instruments[k].subscales) {
      rep.reliability.push_back(subscale_reliability(keyed[k], instruments[k], sub, options));
    }
  }

  const DataTable wide = scores_wide(scores);
  std::vector<std::string> traits, constructs;
  for (const auto& label : wide.labels) {
    (belongs_to(label, options.trait_instrument) ? traits : constructs).push_back(label);
  }
  if (traits.size() >= 2) rep.intercorrelations = correlation_matrix(wide.select_columns(traits));
  for (const auto& t : traits) {
    const Eigen::VectorXd x = wide.values.col(wide.column(t));
    for (const auto& c : constructs) {
      const Correlation corr = pearson(x, wide.values.col(wide.column(c)));
      rep.criterion_validity.push_back({t, c, corr.r, corr.n_pairs, corr.note});
    }
  }

  rep.frequencies =
      frequency_table(observations_from_matrix(matrix, instruments, GroupBy::kSubscale), false);

  for (auto& f : cfa_jobs) rep.cfa.push_back(f.get());

  if (human) {
    TraitBiasSection sec;
    DataTable llm = wide.select_columns(human->traits.labels);
    std::vector<std::string> wanted = llm.row_ids;
    DataTable ref;
    ref.labels = human->traits.labels;
    ref.row_ids = wanted;
    ref.values.resize(static_cast<Eigen::Index>(wanted.size()), human->traits.cols());
    for (std::size_t r = 0; r < wanted.size(); ++r) {
      auto it = std::find(human->traits.row_ids.begin(), human->traits.row_ids.end(), wanted[r]);
      if (it == human->traits.row_ids.end()) {
        throw Error(ErrorCode::kAlignmentMismatch, "no human scores for persona '" + wanted[r] + "'");
      }
      ref.values.row(static_cast<Eigen::Index>(r)) =
          human->traits.values.row(it - human->traits.row_ids.begin());
    }
    sec.report = trait_bias(ref, llm);

    DataTable covariates = human->demographics;
    for (Eigen::Index c = 0; c < human->traits.cols(); ++c) {
      covariates.labels.push_back("human:" + human->traits.labels[static_cast<std::size_t>(c)]);
    }
    // human trait columns follow the demographics, rows aligned by persona id
    Eigen::MatrixXd extra(covariates.rows(), human->traits.cols());
    for (Eigen::Index r = 0; r < covariates.rows(); ++r) {
      auto it = std::find(human->traits.row_ids.begin(), human->traits.row_ids.end(),
                          covariates.row_ids[static_cast<std::size_t>(r)]);
      extra.row(r) = it == human->traits.row_ids.end()
                         ? Eigen::RowVectorXd::Constant(human->traits.cols(), kMissing)
                         : Eigen::RowVectorXd(human->traits.values.row(it - human->traits.row_ids.begin()));
    }
    Eigen::MatrixXd joined(covariates.rows(), covariates.cols() + extra.cols());
    joined << covariates.values, extra;
    covariates.values = joined;
    sec.correlates = bias_correlates(sec.report.persona_ids, sec.report.persona_mean, covariates);

    if (comparison) {
      sec.comparison_run_id = comparison->run_id;
      const TraitBiasReport other = trait_bias(ref, scores_wide(*comparison).select_columns(ref.labels));
      sec.comparison = compare_trait_bias(sec.report, other);
    }
    rep.trait_bias = std::move(sec);
  }
  return rep;
}

json report_to_json(const AnalysisReport& rep) {
  json j;
  j["run_id"] = rep.run_id;
  j["n_personas"] = rep.n_personas;
  j["options"] = {{"reliability_missing", missing_name(rep.options.reliability_missing)},
                  {"cfa_missing", "listwise"},
                  {"correlation_missing", "pairwise"},
                  {"threshold", rep.options.threshold},
                  {"trait_instrument", rep.options.trait_instrument},
                  {"cfa_seed", rep.options.cfa.seed},
                  {"cfa_max_restarts", rep.options.cfa.max_restarts}};

  json rel = json::array();
  for (const auto& r : rep.reliability) {
    rel.push_back({{"instrument", r.instrument},
                   {"subscale", r.subscale},
                   {"n_items", r.n_items},
                   {"n_personas", r.n_personas},
                   {"alpha", opt(r.alpha)},
                   {"omega", opt(r.omega)},
                   {"glb", opt(r.glb)},
                   {"below_threshold", r.below_threshold},
                   {"zero_variance_items", r.zero_variance_items},
                   {"notes", r.notes}});
  }
  j["reliability"] = rel;

  const auto& ic = rep.intercorrelations;
  json r = json::array(), np = json::array();
  for (Eigen::Index a = 0; a < ic.r.rows(); ++a) {
    json rr = json::array(), nn = json::array();
    for (Eigen::Index b = 0; b < ic.r.cols(); ++b) {
      rr.push_back(num(ic.r(a, b)));
      nn.push_back(ic.n_pairs(a, b));
    }
    r.push_back(rr);
    np.push_back(nn);
  }
  j["intercorrelations"] = {{"labels", ic.labels}, {"r", r}, {"n_pairs", np}};

  json cv = json::array();
  for (const auto& c : rep.criterion_validity) {
    cv.push_back({{"trait", c.trait}, {"construct", c.construct}, {"r", opt(c.r)},
                  {"n_pairs", c.n_pairs}, {"note", c.note}});
  }
  j["criterion_validity"] = cv;

  json fr = json::array();
  for (const auto& f : rep.frequencies.rows) {
    fr.push_back({{"group", f.group}, {"split", f.split}, {"value", f.value}, {"count", f.count},
                  {"total", f.total}, {"frequency", f.frequency}});
  }
  j["frequencies"] = fr;

  json cfa = json::array();
  for (const auto& c : rep.cfa) {
    json e;
    e["instrument"] = c.instrument;
    e["converged"] = c.failure.empty() && c.result && c.result->converged;
    e["failure"] = c.failure;
    e["notes"] = c.notes;
    e["fit"] = c.fit ? json{{"gfi", c.fit->gfi},
                            {"ifi", c.fit->ifi},
                            {"rmsea", c.fit->rmsea},
                            {"chi_square", c.fit->chi_square},
                            {"degrees_of_freedom", c.fit->degrees_of_freedom},
                            {"baseline_chi_square", c.fit->baseline_chi_square},
                            {"baseline_degrees_of_freedom", c.fit->baseline_degrees_of_freedom}}
                     : json(nullptr);
    json loadings = json::array(), phi = json::array(), excluded = json::array();
    if (c.result) {
      const auto& res = *c.result;
      e["n"] = res.n;
      e["chi_square"] = num(res.chi_square);
      e["degrees_of_freedom"] = res.degrees_of_freedom;
      e["offending_eigenvalue"] = opt(res.offending_eigenvalue);
      e["factors"] = res.factors;
      auto se = [&](const std::string& name, bool robust) -> json {
        if (!c.estimates) return nullptr;
        const auto& names = c.estimates->names;
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) return nullptr;
        const auto i = it - names.begin();
        return num(robust ? c.estimates->robust_se(i) : c.estimates->naive_se(i));
      };
      // a fit that failed before estimation has no loadings
      const std::size_t estimated =
          static_cast<std::size_t>(res.loadings.size()) == res.items.size() ? res.items.size() : 0;
      for (std::size_t i = 0; i < estimated; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        loadings.push_back({{"item", res.items[i]},
                            {"factor", res.factors[static_cast<std::size_t>(res.item_factor[i])]},
                            {"loading", num(res.loadings(k))},
                            {"residual_variance", num(res.residual_variances(k))},
                            {"se_robust", se("lambda:" + res.items[i], true)},
                            {"se_naive", se("lambda:" + res.items[i], false)}});
      }
      for (Eigen::Index a = 0; a < res.phi.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < res.phi.cols(); ++b) {
          const std::string fa = res.factors[static_cast<std::size_t>(a)];
          const std::string fb = res.factors[static_cast<std::size_t>(b)];
          phi.push_back({{"a", fa}, {"b", fb}, {"phi", num(res.phi(a, b))},
                         {"se_robust", se("phi:" + fa + "~" + fb, true)},
                         {"se_naive", se("phi:" + fa + "~" + fb, false)}});
        }
      }
      for (const auto& x : res.excluded) excluded.push_back({{"item", x.item}, {"reason", x.reason}});
    }
    e["loadings"] = loadings;
    e["factor_correlations"] = phi;
    e["excluded"] = excluded;
    cfa.push_back(e);
  }
  j["cfa"] = cfa;

  if (!rep.trait_bias) {
    j["trait_bias"] = nullptr;
    j["bias_correlates"] = json::array();
    return j;
  }
  const auto& tb = *rep.trait_bias;
  const auto& b = tb.report;
  json traits = json::array();
  for (std::size_t t = 0; t < b.traits.size(); ++t) {
    const auto k = static_cast<Eigen::Index>(t);
    traits.push_back({{"trait", b.traits[t]},
                      {"mean", num(b.trait_mean(k))},
                      {"sd", num(b.trait_sd(k))},
                      {"formatted", format_mean_sd(b.trait_mean(k), b.trait_sd(k))}});
  }
  json persona = json::array();
  for (std::size_t p = 0; p < b.persona_ids.size(); ++p) {
    for (std::size_t t = 0; t < b.traits.size(); ++t) {
      persona.push_back({{"persona_id", b.persona_ids[p]},
                         {"trait", b.traits[t]},
                         {"bias", num(b.bias(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(t)))}});
    }
  }
  json comp = json::array();
  for (const auto& c : tb.comparison) {
    comp.push_back({{"trait", c.trait},
                    {"t", num(c.welch.t)},
                    {"df", num(c.welch.df)},
                    {"p", num(c.welch.p)},
                    {"mean_a", num(c.welch.mean_a)},
                    {"mean_b", num(c.welch.mean_b)},
                    {"formatted", format_welch(c.welch)}});
  }
  j["trait_bias"] = {{"traits", traits},
                     {"grand", {{"mean", num(b.grand_mean)},
                                {"sd", num(b.grand_sd)},
                                {"n_personas", b.n_personas},
                                {"formatted", format_mean_sd(b.grand_mean, b.grand_sd)}}},
                     {"per_persona", persona},
                     {"comparison_run_id", tb.comparison_run_id},
                     {"comparison", comp}};
  json bc = json::array();
  for (const auto& c : tb.correlates) {
    bc.push_back({{"covariate", c.covariate}, {"r", opt(c.r)}, {"n_pairs", c.n_pairs}, {"note", c.note}});
  }
  j["bias_correlates"] = bc;
  return j;
}

ReportSummary read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  ReportSummary out;
  try {
    out.document = json::parse(in);
    out.run_id = out.document.at("run_id").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, path.string() + ": " + e.what());
  }
  return out;
}

std::vector<std::string> write_report_tables(const AnalysisReport& rep,
                                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  auto open = [&](const std::string& name, const csv::Row& header) {
    auto out = std::make_unique<std::ofstream>(dir / name, std::ios::binary | std::ios::trunc);
    if (!*out) throw Error(ErrorCode::kInvalidInput, "cannot write " + (dir / name).string());
    *out << "# run_id=" << rep.run_id << "\n";
    csv::write_row(*out, header);
    written.push_back(name);
    return out;
  };

  {
    auto out = open("reliability.csv", {"instrument", "subscale", "n_items", "n_personas", "alpha",
                                        "omega", "glb", "below_threshold"});
    for (const auto& r : rep.reliability) {
      csv::write_row(*out, {r.instrument, r.subscale, std::to_string(r.n_items),
                            std::to_string(r.n_personas), cell(r.alpha), cell(r.omega), cell(r.glb),
                            r.below_threshold ? "1" : "0"});
    }
  }
  {
    auto out = open("intercorrelations.csv", {"row", "col", "r", "n_pairs"});
    const auto& ic = rep.intercorrelations;
    for (std::size_t a = 0; a < ic.labels.size(); ++a) {
      for (std::size_t b = 0; b < ic.labels.size(); ++b) {
        const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
        csv::write_row(*out, {ic.labels[a], ic.labels[b], cell(ic.r(ia, ib)),
                              std::to_string(ic.n_pairs(ia, ib))});
      }
    }
  }
  {
    auto out = open("criterion_validity.csv", {"trait", "construct", "r", "n_pairs", "note"});
    for (const auto& c : rep.criterion_validity) {
      csv::write_row(*out, {c.trait, c.construct, cell(c.r), std::to_string(c.n_pairs), c.note});
    }
  }
  {
    auto out = open("frequencies.csv", {"group", "split", "value", "count", "total", "frequency"});
    for (const auto& f : rep.frequencies.rows) {
      csv::write_row(*out, {f.group, f.split, std::to_string(f.value), std::to_string(f.count),
                            std::to_string(f.total), cell(f.frequency)});
    }
  }
  {
    auto fit = open("cfa_fit.csv", {"instrument", "converged", "n", "chi_square", "df", "gfi", "ifi",
                                    "rmsea", "failure"});
    auto load = open("cfa_loadings.csv", {"instrument", "item", "factor", "loading",
                                          "residual_variance", "se_robust", "se_naive"});
    auto phi = open("cfa_factor_correlations.csv",
                    {"instrument", "factor_a", "factor_b", "phi", "se_robust", "se_naive"});
    auto exc = open("cfa_exclusions.csv", {"instrument", "item", "reason"});
    const json doc = report_to_json(rep);
    for (const auto& c : doc["cfa"]) {
      const std::string inst = c["instrument"];
      const json& f = c["fit"];
      csv::write_row(*fit, {inst, c["converged"].get<bool>() ? "1" : "0",
                            c.contains("n") ? std::to_string(c["n"].get<std::size_t>()) : "",
                            cell(json_opt(c, "chi_square")),
                            c.contains("degrees_of_freedom") ? std::to_string(c["degrees_of_freedom"].get<int>()) : "",
                            f.is_null() ? "" : cell(json_opt(f, "gfi")),
                            f.is_null() ? "" : cell(json_opt(f, "ifi")),
                            f.is_null() ? "" : cell(json_opt(f, "rmsea")), c["failure"].get<std::string>()});
      for (const auto& l : c["loadings"]) {
        csv::write_row(*load, {inst, l["item"], l["factor"], cell(json_opt(l, "loading")),
                               cell(json_opt(l, "residual_variance")), cell(json_opt(l, "se_robust")),
                               cell(json_opt(l, "se_naive"))});
      }
      for (const auto& p : c["factor_correlations"]) {
        csv::write_row(*phi, {inst, p["a"], p["b"], cell(json_opt(p, "phi")),
                              cell(json_opt(p, "se_robust")), cell(json_opt(p, "se_naive"))});
      }
      for (const auto& x : c["excluded"]) csv::write_row(*exc, {inst, x["item"], x["reason"]});
    }
  }
  if (rep.trait_bias) {
    const auto& b = rep.trait_bias->report;
    {
      auto out = open("trait_bias.csv", {"persona_id", "trait", "bias"});
      for (std::size_t p = 0; p < b.persona_ids.size(); ++p) {
        for (std::size_t t = 0; t < b.traits.size(); ++t) {
          csv::write_row(*out, {b.persona_ids[p], b.traits[t],
                                cell(b.bias(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(t)))});
        }
      }
    }
    {
      auto out = open("trait_bias_summary.csv", {"trait", "mean", "sd", "n"});
      for (std::size_t t = 0; t < b.traits.size(); ++t) {
        const auto k = static_cast<Eigen::Index>(t);
        std::size_t n = 0;
        for (Eigen::Index p = 0; p < b.bias.rows(); ++p) n += !is_missing(b.bias(p, k));
        csv::write_row(*out, {b.traits[t], cell(b.trait_mean(k)), cell(b.trait_sd(k)), std::to_string(n)});
      }
      csv::write_row(*out, {"overall", cell(b.grand_mean), cell(b.grand_sd), std::to_string(b.n_personas)});
    }
    {
      auto out = open("bias_correlates.csv", {"covariate", "r", "n_pairs", "note"});
      for (const auto& c : rep.trait_bias->correlates) {
        csv::write_row(*out, {c.covariate, cell(c.r), std::to_string(c.n_pairs), c.note});
      }
    }
    if (!rep.trait_bias->comparison.empty()) {
      auto out = open("trait_bias_comparison.csv",
                      {"trait", "comparison_run_id", "t", "df", "p", "mean_a", "mean_b"});
      for (const auto& c : rep.trait_bias->comparison) {
        csv::write_row(*out, {c.trait, rep.trait_bias->comparison_run_id, cell(c.welch.t),
                              cell(c.welch.df), cell(c.welch.p), cell(c.welch.mean_a),
                              cell(c.welch.mean_b)});
      }
    }
  }
  return written;
}

std::string render_report(const json& doc) {
  std::ostringstream out;
  const double threshold = doc.at("options").value("threshold", 0.70);
  out << "Run " << doc.at("run_id").get<std::string>() << " (" << doc.value("n_personas", 0)
      << " personas)\n\n";

  out << "Reliability (flag: alpha below " << apa_number(threshold) << ")\n";
  out << std::left << std::setw(12) << "Instrument" << std::setw(10) << "Subscale" << std::setw(8)
      << "alpha" << std::setw(8) << "omega" << std::setw(8) << "glb" << "\n";
  std::size_t flagged = 0, total = 0;
  for (const auto& r : doc.at("reliability")) {
    ++total;
    const bool below = r.at("below_threshold").get<bool>();
    flagged += below;
    out << std::setw(12) << r.at("instrument").get<std::string>() << std::setw(10)
        << r.at("subscale").get<std::string>() << std::setw(8) << apa_or(r, "alpha") << std::setw(8)
        << apa_or(r, "omega") << std::setw(8) << apa_or(r, "glb")
        << (below ? "below " + apa_number(threshold) : "") << "\n";
  }
  out << flagged << " of " << total << " subscales below " << apa_number(threshold) << "\n\n";

  out << "CFA fit indices\n";
  out << std::setw(12) << "Data" << std::setw(8) << "GFI" << std::setw(8) << "IFI" << std::setw(8)
      << "RMSEA" << "\n";
  for (const auto& c : doc.at("cfa")) {
    out << std::setw(12) << c.at("instrument").get<std::string>();
    if (c.at("fit").is_null()) {
      const std::string why = c.at("failure").get<std::string>();
      out << "not reported: " << (why.empty() ? "fit indices unavailable" : why) << "\n";
    } else {
      const auto& f = c.at("fit");
      out << std::setw(8) << apa_or(f, "gfi") << std::setw(8) << apa_or(f, "ifi") << std::setw(8)
          << apa_or(f, "rmsea") << "\n";
    }
    for (const auto& x : c.at("excluded")) {
      out << "  excluded " << x.at("item").get<std::string>() << " ("
          << x.at("reason").get<std::string>() << ")\n";
    }
  }

  if (!doc.at("trait_bias").is_null()) {
    const auto& tb = doc.at("trait_bias");
    out << "\nTrait bias\n";
    for (const auto& t : tb.at("traits")) {
      out << "  " << std::setw(10) << t.at("trait").get<std::string>()
          << t.at("formatted").get<std::string>() << "\n";
    }
    out << "  " << std::setw(10) << "overall" << tb.at("grand").at("formatted").get<std::string>()
        << ", n = " << tb.at("grand").at("n_personas").get<std::size_t>() << "\n";
    if (!tb.at("comparison").empty()) {
      out << "  compared with run " << tb.at("comparison_run_id").get<std::string>() << ":\n";
      for (const auto& c : tb.at("comparison")) {
        out << "  " << std::setw(10) << c.at("trait").get<std::string>()
            << c.at("formatted").get<std::string>() << "\n";
      }
    }
  }
  return out.str();
}

}  // namespace psychoprobe
