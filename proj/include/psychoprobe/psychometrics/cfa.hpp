#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psychoprobe/psychometrics/covariance.hpp"
#include "psychoprobe/psychometrics/optimize.hpp"

namespace psychoprobe {

struct CfaExclusion {
  std::string item;
  std::string reason;  // "uniform" for zero-variance items
};

// Simple-structure pattern: every item loads on exactly one factor.
// Factor variances are fixed to 1.
struct CfaSpec {
  std::vector<std::string> factors;
  std::vector<std::string> items;
  std::vector<int> item_factor;  // parallel to items
  std::vector<CfaExclusion> excluded;

  static CfaSpec single_factor(const std::string& factor, const std::vector<std::string>& items);
  void add_item(const std::string& item, const std::string& factor);

  // Drops `item`, recording the reason.
  void exclude(const std::string& item, const std::string& reason);

  // Throws SpecInvalid (unknown factor, duplicate item, factor with < 2 items).
  void validate() const;

  std::vector<int> factor_sizes() const;
};

struct CfaOptions {
  MinimizeOptions minimize;
  int max_restarts = 5;
  std::uint64_t seed = 20240501;
  double eigen_tolerance = 1e-8;
};

struct CfaResult {
  std::vector<std::string> items;
  std::vector<std::string> factors;
  std::vector<int> item_factor;
  std::vector<CfaExclusion> excluded;

  Eigen::VectorXd loadings;            // per item, on its own factor
  Eigen::VectorXd residual_variances;  // Theta diagonal
  Eigen::MatrixXd phi;                 // factor correlations, unit diagonal
  Eigen::MatrixXd implied;             // Sigma(theta-hat)
  Eigen::MatrixXd sample;              // S actually fitted

  double f_ml = 0.0;
  double chi_square = 0.0;
  int degrees_of_freedom = 0;
  std::size_t n = 0;
  bool converged = false;
  std::string failure;
  std::optional<double> offending_eigenvalue;
  int iterations = 0;
  int restarts = 0;
  double gradient_norm = 0.0;

  Eigen::MatrixXd lambda_matrix() const;  // p x m
};

// ML discrepancy for a fixed pattern and sample covariance.
// Parameter vector: [lambda_1..p, log theta_1..p, phi_ab (a<b, row-major)].
class CfaModel {
 public:
  CfaModel(Eigen::MatrixXd sample, std::vector<int> item_factor, int n_factors);

  Eigen::Index num_items() const noexcept { return p_; }
  int num_factors() const noexcept { return m_; }
  Eigen::Index num_params() const noexcept { return 2 * p_ + m_ * (m_ - 1) / 2; }

  // +inf when Sigma is not positive definite.
  double objective(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;

  Eigen::MatrixXd lambda(const Eigen::VectorXd& x) const;
  Eigen::VectorXd theta(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd phi(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd implied(const Eigen::VectorXd& x) const;

  Eigen::VectorXd start_values() const;

  int degrees_of_freedom() const;

 private:
  Eigen::MatrixXd s_;
  double log_det_s_ = 0.0;
  std::vector<int> item_factor_;
  Eigen::Index p_;
  int m_;
};

// ML discrepancy between S and a fixed Sigma; +inf if Sigma is not PD.
double ml_discrepancy(const Eigen::MatrixXd& sample, const Eigen::MatrixXd& implied);

// Fits the model to the covariance. Zero-variance items are excluded first
// with reason "uniform". Non-convergence or a non-PD solution is reported in
// the result (converged = false, failure set), not thrown.
// Throws SpecInvalid when the pattern is unusable after exclusions.
CfaResult fit_cfa(const CovarianceMatrix& cov, CfaSpec spec, const CfaOptions& options = {});

// Listwise covariance of the spec's items, then fit.
CfaResult fit_cfa(const DataTable& data, CfaSpec spec, const CfaOptions& options = {});

struct ParameterEstimates {
  std::vector<std::string> names;  // "lambda:ITEM", "theta:ITEM", "phi:F1~F2"
  Eigen::VectorXd estimates;
  Eigen::VectorXd robust_se;
  Eigen::VectorXd naive_se;
};

// Huber-White sandwich SEs from per-row score contributions, on the natural
// parameters (lambda, theta, phi). Uses the listwise-complete rows of `data`
// for the result's items. Throws NotConverged, SingularHessian.
ParameterEstimates robust_standard_errors(const CfaResult& result, const DataTable& data);

struct FitIndices {
  double gfi = 0.0;
  double ifi = 0.0;
  double rmsea = 0.0;
  double chi_square = 0.0;
  int degrees_of_freedom = 0;
  double baseline_chi_square = 0.0;
  int baseline_degrees_of_freedom = 0;
};

// GFI, IFI against the independence model, and RMSEA, evaluated for the
// result's Sigma against S. Throws NotConverged, BaselineFitFailed.
FitIndices fit_indices(const CfaResult& result, const Eigen::MatrixXd& sample, std::size_t n);

}  // namespace psychoprobe
