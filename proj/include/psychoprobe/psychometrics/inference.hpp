#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psychoprobe/psychometrics/data_table.hpp"

namespace psychoprobe {

struct WelchResult {
  double t = 0.0;
  double df = 0.0;  // Welch-Satterthwaite, usually fractional
  double p = 1.0;   // two-sided
  double mean_a = 0.0, mean_b = 0.0;
  std::size_t n_a = 0, n_b = 0;
};

// Missing (NaN) entries are dropped first. Throws DegenerateSample when a
// sample has fewer than 2 values or both variances are zero.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

// "t(1968.5) = 2.83, p = .005"
std::string format_welch(const WelchResult& w);

struct Correlation {
  std::optional<double> r;  // unset if fewer than 3 pairs or a constant column
  std::size_t n_pairs = 0;
  std::string note;  // reason when r is unset
};

// Pearson r over the pairs where both values are present.
Correlation pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct CorrelationMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd r;      // NaN where undefined
  Eigen::MatrixXi n_pairs;
};

// Pairwise-complete correlations; diagonal 1 for any column with variance.
CorrelationMatrix correlation_matrix(const DataTable& data);

// APA-style number: two decimals, leading zero dropped when |v| < 1 (".63", "-.07", "1.20").
std::string apa_number(double v, int decimals = 2);

}  // namespace psychoprobe
