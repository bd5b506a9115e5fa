#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psychoprobe/psychometrics/data_table.hpp"

namespace psychoprobe {

struct CovarianceMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd values;
  std::size_t n = 0;         // rows used (listwise) or the smallest pair count (pairwise)
  Eigen::MatrixXi pair_n;    // per-cell complete pairs
  MissingData policy = MissingData::kListwise;
  std::vector<std::string> zero_variance;  // flagged, still present in `values`

  Eigen::Index size() const noexcept { return values.rows(); }
};

// Unbiased (n - 1) sample covariance. Throws TooFewRows below 3 usable rows
// (listwise) or when any pair has fewer than 3 complete observations.
CovarianceMatrix covariance_matrix(const DataTable& data,
                                   MissingData policy = MissingData::kListwise);

// Covariance from an already-computed matrix (used when only S and n are known).
CovarianceMatrix covariance_from_values(std::vector<std::string> labels,
                                        Eigen::MatrixXd values, std::size_t n);

CovarianceMatrix submatrix(const CovarianceMatrix& cov, const std::vector<std::string>& labels);

}  // namespace psychoprobe
