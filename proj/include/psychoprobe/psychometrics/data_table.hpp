#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace psychoprobe {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return std::isnan(v); }

// Row-labelled numeric table; NaN marks a missing cell.
struct DataTable {
  std::vector<std::string> row_ids;
  std::vector<std::string> labels;
  Eigen::MatrixXd values;

  Eigen::Index rows() const noexcept { return values.rows(); }
  Eigen::Index cols() const noexcept { return values.cols(); }

  // Index of `label`, or -1.
  Eigen::Index column(const std::string& label) const;

  DataTable select_columns(const std::vector<std::string>& wanted) const;
  DataTable listwise_complete() const;
};

enum class MissingData { kListwise, kPairwise };

const char* missing_data_name(MissingData m);

}  // namespace psychoprobe
