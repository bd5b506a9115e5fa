#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psychoprobe/persona.hpp"
#include "psychoprobe/psychometrics/data_table.hpp"
#include "psychoprobe/psychometrics/inference.hpp"

namespace psychoprobe {

struct TraitBiasReport {
  std::vector<std::string> persona_ids;
  std::vector<std::string> traits;
  Eigen::MatrixXd bias;          // persona x trait, NaN where either score is missing
  Eigen::VectorXd trait_mean;    // over non-missing cells
  Eigen::VectorXd trait_sd;
  Eigen::VectorXd persona_mean;  // average over the persona's traits; NaN if none
  double grand_mean = 0.0;       // mean of persona_mean
  double grand_sd = 0.0;
  std::size_t n_personas = 0;    // personas with a defined persona_mean
};

// |llm - human| per persona and trait. Both tables must hold the same
// persona ids and the same trait labels (any order); rows follow `human`.
// Throws AlignmentMismatch.
TraitBiasReport trait_bias(const DataTable& human, const DataTable& llm);

// "M=.63 (SD=.25)"
std::string format_mean_sd(double mean, double sd);

struct TraitBiasComparison {
  std::string trait;  // a trait label, or "overall" for persona averages
  WelchResult welch;
};

// Welch tests of a against b per trait and on the persona averages.
std::vector<TraitBiasComparison> compare_trait_bias(const TraitBiasReport& a,
                                                    const TraitBiasReport& b);

// Numeric covariates from demographic records. Numeric fields are used as is,
// ordinal fields as their index in the template's value list, binary fields as
// 0/1 on the second listed value ("sex=female"), nominal fields one-hot per
// observed value ("ethnic=White"). Empty optional cells become NaN.
DataTable encode_demographics(const std::vector<SiliconRecord>& records,
                              const SiliconTemplates& templates);

struct BiasCorrelate {
  std::string covariate;
  std::optional<double> r;  // unset for constant covariates
  std::size_t n_pairs = 0;
  std::string note;
};

// Pearson r of the per-persona bias with every covariate column. Throws
// AlignmentMismatch if a persona id has no covariate row.
std::vector<BiasCorrelate> bias_correlates(const std::vector<std::string>& persona_ids,
                                           const Eigen::VectorXd& bias,
                                           const DataTable& covariates);

}  // namespace psychoprobe
