#include "psychoprobe/psychometrics/optimize.hpp"

#include <cmath>
#include <limits>

namespace psychoprobe {
namespace {

constexpr double kArmijo = 1e-4;

struct LineSearch {
  double step = 0.0;
  double value = std::numeric_limits<double>::infinity();
  bool ok = false;
};

LineSearch backtrack(const Objective& f, const Eigen::VectorXd& x, double fx,
                     const Eigen::VectorXd& grad, const Eigen::VectorXd& dir) {
  const double slope = grad.dot(dir);
  LineSearch ls;
  if (!(slope < 0.0)) return ls;
  double step = 1.0;
  for (int k = 0; k < 60; ++k) {
    const double fn = f(x + step * dir);
    if (std::isfinite(fn) && fn <= fx + kArmijo * step * slope) {
      ls.step = step;
      ls.value = fn;
      ls.ok = true;
      return ls;
    }
    step *= 0.5;
  }
  return ls;
}

}  // namespace

Eigen::MatrixXd numerical_hessian(const Gradient& g, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double step = 1e-5 * std::max(1.0, std::abs(x(k)));
    xp(k) = x(k) + step;
    const Eigen::VectorXd gp = g(xp);
    xp(k) = x(k) - step;
    const Eigen::VectorXd gm = g(xp);
    xp(k) = x(k);
    h.col(k) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

MinimizeResult minimize_bfgs(const Objective& f, const Gradient& g, Eigen::VectorXd x0,
                             const MinimizeOptions& options) {
  MinimizeResult out;
  out.x = std::move(x0);
  out.value = f(out.x);
  if (!std::isfinite(out.value)) return out;
  out.gradient = g(out.x);
  const Eigen::Index n = out.x.size();
  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;

  for (; out.iterations < options.max_iterations; ++out.iterations) {
    if (out.gradient.norm() < options.gradient_tolerance) {
      out.converged = true;
      return out;
    }
    Eigen::VectorXd dir = -inv_h * out.gradient;
    LineSearch ls = backtrack(f, out.x, out.value, out.gradient, dir);
    if (!ls.ok) {
      // Reset curvature and retry along steepest descent.
      inv_h.setIdentity();
      dir = -out.gradient;
      ls = backtrack(f, out.x, out.value, out.gradient, dir);
      if (!ls.ok) break;
    }
    const Eigen::VectorXd s = ls.step * dir;
    const Eigen::VectorXd x_new = out.x + s;
    const Eigen::VectorXd g_new = g(x_new);
    const Eigen::VectorXd y = g_new - out.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        inv_h *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_h * y;
      inv_h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
               rho * (hy * s.transpose() + s * hy.transpose());
    }
    const bool stalled = std::abs(out.value - ls.value) <=
                         1e-16 * std::max(1.0, std::abs(out.value));
    out.x = x_new;
    out.value = ls.value;
    out.gradient = g_new;
    if (stalled && out.gradient.norm() >= options.gradient_tolerance) break;
  }

  for (int k = 0; k < options.max_newton_polish; ++k) {
    if (out.gradient.norm() < options.gradient_tolerance) {
      out.converged = true;
      return out;
    }
    Eigen::MatrixXd hess = numerical_hessian(g, out.x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
    Eigen::VectorXd ev = eig.eigenvalues();
    const double floor = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(std::abs(ev(i)), floor);
    const Eigen::VectorXd dir =
        -(eig.eigenvectors() * (eig.eigenvectors().transpose() * out.gradient).cwiseQuotient(ev));
    LineSearch ls = backtrack(f, out.x, out.value, out.gradient, dir);
    if (!ls.ok) {
      // At the noise floor of f: accept a full step if it shrinks the gradient.
      const Eigen::VectorXd trial = out.x + dir;
      const double ft = f(trial);
      if (!std::isfinite(ft)) break;
      const Eigen::VectorXd gt = g(trial);
      if (gt.norm() >= out.gradient.norm()) break;
      out.x = trial;
      out.value = ft;
      out.gradient = gt;
    } else {
      out.x += ls.step * dir;
      out.value = ls.value;
      out.gradient = g(out.x);
    }
    ++out.iterations;
  }
  out.converged = out.gradient.norm() < options.gradient_tolerance;
  return out;
}

}  // namespace psychoprobe
