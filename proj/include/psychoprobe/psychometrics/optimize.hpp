#pragma once

#include <functional>

#include <Eigen/Dense>

namespace psychoprobe {

// Objective returns +inf outside its domain; the line search backs off.
using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct MinimizeOptions {
  double gradient_tolerance = 1e-6;  // Euclidean norm
  int max_iterations = 5000;
  int max_newton_polish = 50;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
};

// BFGS with Armijo backtracking. If it stalls above the tolerance, Newton
// steps on a finite-difference Hessian of the analytic gradient finish the job.
MinimizeResult minimize_bfgs(const Objective& f, const Gradient& g, Eigen::VectorXd x0,
                             const MinimizeOptions& options = {});

// Central-difference Jacobian of `g`, symmetrised.
Eigen::MatrixXd numerical_hessian(const Gradient& g, const Eigen::VectorXd& x);

}  // namespace psychoprobe
