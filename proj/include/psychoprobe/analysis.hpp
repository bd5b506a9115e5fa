#pragma once

// Full analysis of one run: reliability per subscale, trait intercorrelations,
// criterion correlations, item frequencies, per-instrument CFA, and trait bias
// against human scores when those are supplied.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psychoprobe/persona.hpp"
#include "psychoprobe/psychometrics/cfa.hpp"
#include "psychoprobe/psychometrics/data_table.hpp"
#include "psychoprobe/psychometrics/inference.hpp"
#include "psychoprobe/psychometrics/trait_bias.hpp"
#include "psychoprobe/response_parser.hpp"
#include "psychoprobe/scale_bank.hpp"
#include "psychoprobe/scores.hpp"

namespace psychoprobe {

struct AnalysisOptions {
  // Item-level covariance for reliability. CFA always uses listwise rows.
  MissingData reliability_missing = MissingData::kListwise;
  double threshold = 0.70;
  std::string trait_instrument = "BFI";  // source of intercorrelations and criterion columns
  CfaOptions cfa;
  bool robust_se = true;
};

struct ReliabilityRow {
  std::string instrument;
  std::string subscale;
  std::size_t n_items = 0;
  std::size_t n_personas = 0;
  std::optional<double> alpha, omega, glb;
  bool below_threshold = true;  // alpha missing or under the threshold
  std::vector<std::string> zero_variance_items;
  std::vector<std::string> notes;  // why a coefficient is missing
};

struct CriterionCell {
  std::string trait;
  std::string construct;
  std::optional<double> r;
  std::size_t n_pairs = 0;
  std::string note;
};

struct InstrumentCfa {
  std::string instrument;
  std::optional<CfaResult> result;  // unset when the model could not be set up
  std::optional<FitIndices> fit;
  std::optional<ParameterEstimates> estimates;
  std::string failure;  // empty when converged
  std::vector<std::string> notes;
};

struct TraitBiasSection {
  TraitBiasReport report;
  std::vector<BiasCorrelate> correlates;
  std::string comparison_run_id;
  std::vector<TraitBiasComparison> comparison;  // this run against the comparison run
};

struct AnalysisReport {
  std::string run_id;
  AnalysisOptions options;
  std::size_t n_personas = 0;
  std::vector<ReliabilityRow> reliability;
  CorrelationMatrix intercorrelations;
  std::vector<CriterionCell> criterion_validity;
  FrequencyTable frequencies;
  std::vector<InstrumentCfa> cfa;
  std::optional<TraitBiasSection> trait_bias;
};

// Human ground truth for silicon personas.
struct HumanReference {
  DataTable traits;        // persona x "BFI:E" ...
  DataTable demographics;  // encoded covariates
};

// Trait columns bfi_e ... become "BFI:E" ...
HumanReference human_reference(const std::vector<SiliconRecord>& records,
                               const SiliconTemplates& templates);

// Reverse-keyed, persona x item table ("BFI_1" ...) for one instrument.
DataTable keyed_items(const ResponseMatrix& matrix, const Instrument& instrument);

ReliabilityRow subscale_reliability(const DataTable& keyed, const Instrument& instrument,
                                    const Subscale& subscale, const AnalysisOptions& options);

InstrumentCfa instrument_cfa(const DataTable& keyed, const Instrument& instrument,
                             const AnalysisOptions& options);

AnalysisReport analyze(const ResponseMatrix& matrix, const ScoreTable& scores,
                       const std::vector<Instrument>& instruments, const AnalysisOptions& options,
                       const HumanReference* human = nullptr,
                       const ScoreTable* comparison = nullptr);

nlohmann::json report_to_json(const AnalysisReport& report);

// Reads back the summary fields that `report` renders.
struct ReportSummary {
  std::string run_id;
  nlohmann::json document;
};

ReportSummary read_report_json(const std::filesystem::path& path);

// Tidy CSV tables, one file per table, each starting with "# run_id=".
// Returns the file names written.
std::vector<std::string> write_report_tables(const AnalysisReport& report,
                                             const std::filesystem::path& dir);

// Plain-text summary: reliability with .70 flags, fit-index table, trait bias.
std::string render_report(const nlohmann::json& document);

}  // namespace psychoprobe
