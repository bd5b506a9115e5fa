#include "psychoprobe/psychometrics/reliability.hpp"

#include <cmath>
#include <vector>

#include "psychoprobe/error.hpp"
#include "psychoprobe/psychometrics/cfa.hpp"

namespace psychoprobe {
namespace {

double total_variance(const CovarianceMatrix& cov) {
  if (cov.size() < 2) {
    throw Error(ErrorCode::kTooFewItems,
                std::to_string(cov.size()) + " items; at least 2 required");
  }
  const double total = cov.values.sum();
  if (!(total > 0.0)) {
    throw Error(ErrorCode::kZeroTotalVariance, "sum of covariance entries is " +
                                                   std::to_string(total));
  }
  return total;
}

// Lower Cholesky of m; false if m is not positive definite.
bool chol_ok(const Eigen::MatrixXd& m, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(m);
  return llt.info() == Eigen::Success;
}

}  // namespace

double cronbach_alpha(const CovarianceMatrix& cov) {
  const double total = total_variance(cov);
  const double k = static_cast<double>(cov.size());
  return k / (k - 1.0) * (1.0 - cov.values.diagonal().sum() / total);
}

Eigen::VectorXd glb_error_variances(const CovarianceMatrix& cov, const GlbOptions& options) {
  total_variance(cov);
  const Eigen::Index p = cov.size();
  const double scale = cov.values.diagonal().mean();
  Eigen::MatrixXd c = cov.values / scale;
  c = 0.5 * (c + c.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double lmax = std::max(1.0, ev(p - 1));
  if (ev(0) < -1e-10 * lmax) {
    throw Error(ErrorCode::kNotPsdInput,
                "smallest eigenvalue " + std::to_string(ev(0) * scale) + " is negative");
  }

  // For a null vector v of C, v'(C - D)v >= 0 forces theta_i = 0 wherever
  // v_i != 0. The remaining theta only act on range(C), so the constraint
  // becomes Lambda - A' diag(theta) A >= 0 with A the range eigenvectors
  // restricted to the free items. That reduced problem has an interior.
  Eigen::Index rank_start = 0;
  while (rank_start < p && ev(rank_start) < 1e-9 * lmax) ++rank_start;
  const Eigen::Index r = p - rank_start;
  const Eigen::MatrixXd null_basis = eig.eigenvectors().leftCols(rank_start);
  std::vector<Eigen::Index> free_items;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (rank_start == 0 || null_basis.row(i).norm() < 1e-6) free_items.push_back(i);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
  const auto q = static_cast<Eigen::Index>(free_items.size());
  if (q == 0) return out;

  const Eigen::VectorXd lambda_diag = ev.tail(r);
  Eigen::MatrixXd a(q, r);
  for (Eigen::Index j = 0; j < q; ++j) a.row(j) = eig.eigenvectors().row(free_items[static_cast<std::size_t>(j)]).tail(r);

  // maximize sum(theta) s.t. Lambda - A' diag(theta) A > 0, theta > 0
  // barrier: phi_t = -t*sum(theta) - logdet(M) - sum(log theta)
  // phi_t is self-concordant, so the damped Newton step 1/(1 + lambda) stays
  // feasible and needs no function values (which lose precision as t grows).
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(q, 0.5 * ev(rank_start));
  Eigen::LLT<Eigen::MatrixXd> llt;
  auto feasible = [&](const Eigen::VectorXd& th) {
    if ((th.array() <= 0.0).any()) return false;
    Eigen::MatrixXd m = -a.transpose() * th.asDiagonal() * a;
    m.diagonal() += lambda_diag;
    return chol_ok(m, llt);
  };

  double t = 1.0;
  int steps = 0;
  const double gap_target = options.tolerance * c.sum();
  while (true) {
    for (int inner = 0;;) {
      if (++steps > options.max_iterations) {
        throw Error(ErrorCode::kNoConvergence, "glb did not converge within " +
                                                   std::to_string(options.max_iterations) +
                                                   " Newton steps");
      }
      feasible(theta);
      const Eigen::MatrixXd w = a * llt.solve(a.transpose());
      const Eigen::VectorXd grad =
          -t * Eigen::VectorXd::Ones(q) + w.diagonal() - theta.cwiseInverse();
      Eigen::MatrixXd hess = w.cwiseProduct(w);
      hess.diagonal() += theta.array().square().inverse().matrix();
      const Eigen::VectorXd step = -hess.ldlt().solve(grad);
      const double decrement = -grad.dot(step);
      // Centred enough: the objective error this leaves is about decrement / t.
      // Rounding in -t + W_ii puts a floor near 1e-9 on the decrement at large t.
      // Near-singular M raises that floor further; after enough steps a
      // small decrement is as centred as the arithmetic allows.
      if (!(decrement > 1e-7) || (++inner > 50 && decrement < 1e-2)) break;
      const double lambda = std::sqrt(decrement);
      double s = lambda > 0.25 ? 1.0 / (1.0 + lambda) : 1.0;
      while (s > 1e-16 && !feasible(theta + s * step)) s *= 0.5;
      const Eigen::VectorXd next = theta + s * step;
      if (s <= 1e-16 || next == theta) break;
      theta = next;
    }
    // r + q barrier terms: the suboptimality is at most (r + q)/t.
    if (static_cast<double>(r + q) / t < gap_target) break;
    t *= 10.0;
  }
  for (Eigen::Index j = 0; j < q; ++j) out(free_items[static_cast<std::size_t>(j)]) = theta(j) * scale;
  return out;
}

double greatest_lower_bound(const CovarianceMatrix& cov, const GlbOptions& options) {
  const Eigen::VectorXd theta = glb_error_variances(cov, options);
  return 1.0 - theta.sum() / cov.values.sum();
}

double omega_from_loadings(const Eigen::VectorXd& loadings, const Eigen::VectorXd& residuals) {
  const double common = loadings.sum() * loadings.sum();
  return common / (common + residuals.sum());
}

double mcdonald_omega(const CovarianceMatrix& cov) {
  total_variance(cov);
  const CfaSpec spec = CfaSpec::single_factor("g", cov.labels);
  const CfaResult fit = fit_cfa(cov, spec);
  if (!fit.converged) {
    throw Error(ErrorCode::kFitFailed, "one-factor model did not converge: " + fit.failure);
  }
  return omega_from_loadings(fit.loadings, fit.residual_variances);
}

}  // namespace psychoprobe
