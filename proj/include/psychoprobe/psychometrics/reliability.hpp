#pragma once

#include "psychoprobe/psychometrics/covariance.hpp"

namespace psychoprobe {

// k/(k-1) * (1 - sum of item variances / sum of all covariance entries).
// Throws TooFewItems (k < 2) or ZeroTotalVariance.
double cronbach_alpha(const CovarianceMatrix& cov);

struct GlbOptions {
  double tolerance = 1e-10;  // duality gap relative to the total variance
  int max_iterations = 10000;  // Newton steps across all barrier stages
};

// 1 - tr(Theta*)/total, with Theta* the largest-trace nonnegative diagonal
// that keeps cov - Theta positive semidefinite. Solved with a log-barrier
// interior-point method. Throws NotPSDInput, NoConvergence, TooFewItems.
double greatest_lower_bound(const CovarianceMatrix& cov, const GlbOptions& options = {});

// The diagonal Theta* itself (same units as cov).
Eigen::VectorXd glb_error_variances(const CovarianceMatrix& cov, const GlbOptions& options = {});

// (sum lambda)^2 / ((sum lambda)^2 + sum theta) from a one-factor ML fit.
// Items must already be keyed. Throws FitFailed if the fit does not converge.
double mcdonald_omega(const CovarianceMatrix& cov);

// Direct formula, for callers that already have a solution.
double omega_from_loadings(const Eigen::VectorXd& loadings, const Eigen::VectorXd& residuals);

}  // namespace psychoprobe
