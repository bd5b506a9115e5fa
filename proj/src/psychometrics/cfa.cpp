#include "psychoprobe/psychometrics/cfa.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Eigen::MatrixXd build_lambda(const Eigen::VectorXd& loadings, const std::vector<int>& item_factor,
                             int m) {
  const auto p = static_cast<Eigen::Index>(item_factor.size());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, m);
  for (Eigen::Index i = 0; i < p; ++i) l(i, item_factor[static_cast<std::size_t>(i)]) = loadings(i);
  return l;
}

Eigen::MatrixXd phi_from_params(const Eigen::VectorXd& free, int m) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(m, m);
  Eigen::Index k = 0;
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      phi(a, b) = phi(b, a) = free(k++);
    }
  }
  return phi;
}

// dF/d(lambda, theta, phi) given M = Sigma^-1 - Sigma^-1 S Sigma^-1.
Eigen::VectorXd natural_gradient(const Eigen::MatrixXd& m_mat, const Eigen::MatrixXd& lambda,
                                 const Eigen::MatrixXd& phi, const std::vector<int>& item_factor) {
  const Eigen::Index p = lambda.rows();
  const int m = static_cast<int>(lambda.cols());
  Eigen::VectorXd g(2 * p + m * (m - 1) / 2);
  const Eigen::MatrixXd mlp = m_mat * lambda * phi;
  for (Eigen::Index i = 0; i < p; ++i) {
    g(i) = 2.0 * mlp(i, item_factor[static_cast<std::size_t>(i)]);
    g(p + i) = m_mat(i, i);
  }
  const Eigen::MatrixXd lml = lambda.transpose() * m_mat * lambda;
  Eigen::Index k = 2 * p;
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) g(k++) = 2.0 * lml(a, b);
  }
  return g;
}

// Natural-parameter discrepancy, used for the information matrix.
struct NaturalModel {
  Eigen::MatrixXd sample;
  std::vector<int> item_factor;
  int m;

  Eigen::Index p() const { return static_cast<Eigen::Index>(item_factor.size()); }

  void unpack(const Eigen::VectorXd& z, Eigen::MatrixXd& lambda, Eigen::VectorXd& theta,
              Eigen::MatrixXd& phi) const {
    lambda = build_lambda(z.head(p()), item_factor, m);
    theta = z.segment(p(), p());
    phi = phi_from_params(z.tail(m * (m - 1) / 2), m);
  }

  // M matrix for a given S; false if Sigma is not PD.
  bool m_matrix(const Eigen::VectorXd& z, const Eigen::MatrixXd& s, Eigen::MatrixXd& lambda,
                Eigen::MatrixXd& phi, Eigen::MatrixXd& out) const {
    Eigen::VectorXd theta;
    unpack(z, lambda, theta, phi);
    Eigen::MatrixXd sigma = lambda * phi * lambda.transpose();
    sigma.diagonal() += theta;
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(p(), p()));
    out = inv - inv * s * inv;
    return true;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& z, const Eigen::MatrixXd& s) const {
    Eigen::MatrixXd lambda, phi, mm;
    if (!m_matrix(z, s, lambda, phi, mm)) {
      return Eigen::VectorXd::Constant(z.size(), std::numeric_limits<double>::quiet_NaN());
    }
    return natural_gradient(mm, lambda, phi, item_factor);
  }
};

void flip_signs(CfaResult& r) {
  const int m = static_cast<int>(r.factors.size());
  for (int f = 0; f < m; ++f) {
    double sum = 0.0;
    for (std::size_t i = 0; i < r.items.size(); ++i) {
      if (r.item_factor[i] == f) sum += r.loadings(static_cast<Eigen::Index>(i));
    }
    if (sum >= 0.0) continue;
    for (std::size_t i = 0; i < r.items.size(); ++i) {
      if (r.item_factor[i] == f) r.loadings(static_cast<Eigen::Index>(i)) *= -1.0;
    }
    for (int g = 0; g < m; ++g) {
      if (g == f) continue;
      r.phi(f, g) *= -1.0;
      r.phi(g, f) *= -1.0;
    }
  }
}

std::string negative_eigen_message(const char* what, const Eigen::VectorXd& ev, double tol) {
  int count = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) ++count;
  }
  std::string msg = std::string(what) + " is not positive definite: ";
  msg += count == 1 ? "one eigenvalue was negative" : std::to_string(count) + " eigenvalues were negative";
  msg += " (smallest " + fmt(ev(0)) + ")";
  return msg;
}

}  // namespace

CfaSpec CfaSpec::single_factor(const std::string& factor, const std::vector<std::string>& items) {
  CfaSpec s;
  s.factors = {factor};
  s.items = items;
  s.item_factor.assign(items.size(), 0);
  return s;
}

void CfaSpec::add_item(const std::string& item, const std::string& factor) {
  auto it = std::find(factors.begin(), factors.end(), factor);
  if (it == factors.end()) {
    factors.push_back(factor);
    it = factors.end() - 1;
  }
  items.push_back(item);
  item_factor.push_back(static_cast<int>(it - factors.begin()));
}

void CfaSpec::exclude(const std::string& item, const std::string& reason) {
  auto it = std::find(items.begin(), items.end(), item);
  if (it == items.end()) return;
  const auto pos = it - items.begin();
  items.erase(it);
  item_factor.erase(item_factor.begin() + pos);
  excluded.push_back({item, reason});
}

std::vector<int> CfaSpec::factor_sizes() const {
  std::vector<int> sizes(factors.size(), 0);
  for (int f : item_factor) {
    if (f >= 0 && static_cast<std::size_t>(f) < sizes.size()) ++sizes[static_cast<std::size_t>(f)];
  }
  return sizes;
}

void CfaSpec::validate() const {
  if (factors.empty()) throw Error(ErrorCode::kSpecInvalid, "no factors");
  if (items.size() != item_factor.size()) {
    throw Error(ErrorCode::kSpecInvalid, "item/factor pattern length mismatch");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!seen.insert(items[i]).second) {
      throw Error(ErrorCode::kSpecInvalid, "item '" + items[i] + "' listed twice");
    }
    if (item_factor[i] < 0 || static_cast<std::size_t>(item_factor[i]) >= factors.size()) {
      throw Error(ErrorCode::kSpecInvalid, "item '" + items[i] + "' maps to no factor");
    }
  }
  const auto sizes = factor_sizes();
  for (std::size_t f = 0; f < factors.size(); ++f) {
    if (sizes[f] < 2) {
      throw Error(ErrorCode::kSpecInvalid, "factor '" + factors[f] + "' has " +
                                               std::to_string(sizes[f]) +
                                               " items; at least 2 required");
    }
  }
}

Eigen::MatrixXd CfaResult::lambda_matrix() const {
  return build_lambda(loadings, item_factor, static_cast<int>(factors.size()));
}

CfaModel::CfaModel(Eigen::MatrixXd sample, std::vector<int> item_factor, int n_factors)
    : s_(std::move(sample)),
      item_factor_(std::move(item_factor)),
      p_(s_.rows()),
      m_(n_factors) {
  Eigen::LLT<Eigen::MatrixXd> llt(s_);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNonPositiveDefinite, "sample covariance is not positive definite");
  }
  log_det_s_ = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd CfaModel::lambda(const Eigen::VectorXd& x) const {
  return build_lambda(x.head(p_), item_factor_, m_);
}

Eigen::VectorXd CfaModel::theta(const Eigen::VectorXd& x) const {
  return x.segment(p_, p_).array().exp().matrix();
}

Eigen::MatrixXd CfaModel::phi(const Eigen::VectorXd& x) const {
  return phi_from_params(x.tail(m_ * (m_ - 1) / 2), m_);
}

Eigen::MatrixXd CfaModel::implied(const Eigen::VectorXd& x) const {
  const Eigen::MatrixXd l = lambda(x);
  Eigen::MatrixXd sigma = l * phi(x) * l.transpose();
  sigma.diagonal() += theta(x);
  return sigma;
}

double CfaModel::objective(const Eigen::VectorXd& x) const {
  if (!x.allFinite()) return HUGE_VAL;
  const Eigen::MatrixXd sigma = implied(x);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) return HUGE_VAL;
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double trace = llt.solve(s_).trace();
  return log_det + trace - log_det_s_ - static_cast<double>(p_);
}

Eigen::VectorXd CfaModel::gradient(const Eigen::VectorXd& x) const {
  const Eigen::MatrixXd l = lambda(x);
  const Eigen::MatrixXd ph = phi(x);
  const Eigen::VectorXd th = theta(x);
  Eigen::MatrixXd sigma = l * ph * l.transpose();
  sigma.diagonal() += th;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma);
  const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p_, p_));
  const Eigen::MatrixXd mm = inv - inv * s_ * inv;
  Eigen::VectorXd g = natural_gradient(mm, l, ph, item_factor_);
  // chain rule for theta = exp(psi)
  g.segment(p_, p_) = g.segment(p_, p_).cwiseProduct(th);
  return g;
}

Eigen::VectorXd CfaModel::start_values() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(num_params());
  x.head(p_).setConstant(0.5);
  for (Eigen::Index i = 0; i < p_; ++i) x(p_ + i) = std::log(0.5 * s_(i, i));
  return x;
}

int CfaModel::degrees_of_freedom() const {
  const auto p = static_cast<int>(p_);
  return p * (p + 1) / 2 - static_cast<int>(num_params());
}

double ml_discrepancy(const Eigen::MatrixXd& sample, const Eigen::MatrixXd& implied) {
  Eigen::LLT<Eigen::MatrixXd> ls(sample), li(implied);
  if (ls.info() != Eigen::Success || li.info() != Eigen::Success) return HUGE_VAL;
  const double ld_s = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
  const double ld_i = 2.0 * li.matrixLLT().diagonal().array().log().sum();
  return ld_i + li.solve(sample).trace() - ld_s - static_cast<double>(sample.rows());
}

CfaResult fit_cfa(const CovarianceMatrix& cov, CfaSpec spec, const CfaOptions& options) {
  for (const auto& item : std::vector<std::string>(spec.items)) {
    const auto it = std::find(cov.labels.begin(), cov.labels.end(), item);
    if (it == cov.labels.end()) {
      throw Error(ErrorCode::kSpecInvalid, "item '" + item + "' not in the covariance matrix");
    }
    const auto k = it - cov.labels.begin();
    if (!(cov.values(k, k) > 0.0)) spec.exclude(item, "uniform");
  }
  spec.validate();

  const CovarianceMatrix sub = submatrix(cov, spec.items);
  CfaResult r;
  r.items = spec.items;
  r.factors = spec.factors;
  r.item_factor = spec.item_factor;
  r.excluded = spec.excluded;
  r.n = cov.n;
  r.sample = sub.values;
  const int m = static_cast<int>(spec.factors.size());
  const auto p = static_cast<Eigen::Index>(spec.items.size());
  r.degrees_of_freedom = static_cast<int>(p * (p + 1) / 2 - (2 * p + m * (m - 1) / 2));

  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub.values, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues()(0) <= 0.0) {
      r.failure = negative_eigen_message("sample covariance matrix", eig.eigenvalues(), 0.0);
      r.offending_eigenvalue = eig.eigenvalues()(0);
      return r;
    }
  }

  const CfaModel model(sub.values, spec.item_factor, m);
  const Objective f = [&](const Eigen::VectorXd& x) { return model.objective(x); };
  const Gradient g = [&](const Eigen::VectorXd& x) { return model.gradient(x); };

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  MinimizeResult best;
  best.value = HUGE_VAL;
  for (int attempt = 0; attempt <= options.max_restarts; ++attempt) {
    Eigen::VectorXd x0 = model.start_values();
    if (attempt > 0) {
      for (Eigen::Index i = 0; i < p; ++i) {
        x0(i) += 0.3 * jitter(rng);
        x0(p + i) += 0.5 * jitter(rng);
      }
      for (Eigen::Index k = 2 * p; k < x0.size(); ++k) x0(k) += 0.2 * jitter(rng);
    }
    MinimizeResult res = minimize_bfgs(f, g, x0, options.minimize);
    r.iterations += res.iterations;
    r.restarts = attempt;
    const bool better = (res.converged && !best.converged) ||
                        (res.converged == best.converged && res.value < best.value);
    if (better) best = std::move(res);
    if (best.converged) break;
  }

  if (best.x.size() == 0) {
    r.failure = "no finite starting point";
    return r;
  }
  r.loadings = best.x.head(p);
  r.residual_variances = model.theta(best.x);
  r.phi = model.phi(best.x);
  r.implied = model.implied(best.x);
  r.f_ml = std::max(best.value, 0.0);
  r.chi_square = static_cast<double>(r.n > 0 ? r.n - 1 : 0) * r.f_ml;
  r.gradient_norm = best.gradient.size() ? best.gradient.norm() : HUGE_VAL;
  flip_signs(r);

  if (!best.converged) {
    r.failure = "optimizer stopped with gradient norm " + fmt(r.gradient_norm) + " after " +
                std::to_string(r.iterations) + " iterations";
    return r;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> phi_eig(r.phi, Eigen::EigenvaluesOnly);
  if (phi_eig.eigenvalues()(0) < -options.eigen_tolerance) {
    r.failure = negative_eigen_message("factor covariance matrix", phi_eig.eigenvalues(),
                                       options.eigen_tolerance);
    r.offending_eigenvalue = phi_eig.eigenvalues()(0);
    return r;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sig_eig(r.implied, Eigen::EigenvaluesOnly);
  if (sig_eig.eigenvalues()(0) < -options.eigen_tolerance) {
    r.failure = negative_eigen_message("implied covariance matrix", sig_eig.eigenvalues(),
                                       options.eigen_tolerance);
    r.offending_eigenvalue = sig_eig.eigenvalues()(0);
    return r;
  }
  r.converged = true;
  return r;
}

CfaResult fit_cfa(const DataTable& data, CfaSpec spec, const CfaOptions& options) {
  const DataTable sub = data.select_columns(spec.items);
  return fit_cfa(covariance_matrix(sub, MissingData::kListwise), std::move(spec), options);
}

ParameterEstimates robust_standard_errors(const CfaResult& result, const DataTable& data) {
  if (!result.converged) {
    throw Error(ErrorCode::kNotConverged, "standard errors need a converged solution");
  }
  const DataTable rows = data.select_columns(result.items).listwise_complete();
  const Eigen::Index n = rows.rows();
  if (n < 3) throw Error(ErrorCode::kTooFewRows, "fewer than 3 complete rows");
  const int m = static_cast<int>(result.factors.size());
  const auto p = static_cast<Eigen::Index>(result.items.size());

  NaturalModel nm{result.sample, result.item_factor, m};
  Eigen::VectorXd z(2 * p + m * (m - 1) / 2);
  z.head(p) = result.loadings;
  z.segment(p, p) = result.residual_variances;
  Eigen::Index k = 2 * p;
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) z(k++) = result.phi(a, b);
  }

  const Eigen::MatrixXd a_mat =
      0.5 * numerical_hessian([&](const Eigen::VectorXd& v) { return nm.gradient(v, nm.sample); }, z);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a_mat);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (!(ev(0) > 1e-12 * std::max(1.0, ev(ev.size() - 1)))) {
    throw Error(ErrorCode::kSingularHessian,
                "information matrix is singular (smallest eigenvalue " + fmt(ev(0)) + ")");
  }
  const Eigen::MatrixXd a_inv =
      eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();

  // Per-row scores; M is linear in S so each row uses S_i = d d^T.
  Eigen::MatrixXd lambda, phi, mm;
  Eigen::VectorXd theta;
  nm.unpack(z, lambda, theta, phi);
  Eigen::MatrixXd sigma = lambda * phi * lambda.transpose();
  sigma.diagonal() += theta;
  const Eigen::MatrixXd inv = sigma.llt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::RowVectorXd mean = rows.values.colwise().mean();
  Eigen::MatrixXd scores(n, z.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd d = (rows.values.row(i) - mean).transpose();
    const Eigen::VectorXd u = inv * d;
    mm = inv - u * u.transpose();
    scores.row(i) = 0.5 * natural_gradient(mm, lambda, phi, result.item_factor).transpose();
  }
  const Eigen::MatrixXd centered = scores.rowwise() - scores.colwise().mean();
  const Eigen::MatrixXd b_mat = centered.transpose() * centered / static_cast<double>(n);
  const Eigen::MatrixXd sandwich = a_inv * b_mat * a_inv / static_cast<double>(n);

  ParameterEstimates out;
  out.estimates = z;
  out.robust_se = sandwich.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.naive_se = (a_inv.diagonal() / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index i = 0; i < p; ++i) out.names.push_back("lambda:" + result.items[static_cast<std::size_t>(i)]);
  for (Eigen::Index i = 0; i < p; ++i) out.names.push_back("theta:" + result.items[static_cast<std::size_t>(i)]);
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      out.names.push_back("phi:" + result.factors[static_cast<std::size_t>(a)] + "~" +
                          result.factors[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

FitIndices fit_indices(const CfaResult& result, const Eigen::MatrixXd& sample, std::size_t n) {
  if (!result.converged) {
    throw Error(ErrorCode::kNotConverged, "fit indices need a converged solution");
  }
  const Eigen::Index p = sample.rows();
  if (p != result.implied.rows()) {
    throw Error(ErrorCode::kInvalidInput, "sample and implied covariance differ in size");
  }
  const double nm1 = static_cast<double>(n) - 1.0;
  FitIndices fi;
  fi.degrees_of_freedom = result.degrees_of_freedom;
  const double f = ml_discrepancy(sample, result.implied);
  if (!std::isfinite(f)) {
    throw Error(ErrorCode::kNonPositiveDefinite, "sample or implied covariance is not positive definite");
  }
  fi.chi_square = nm1 * std::max(f, 0.0);

  const Eigen::MatrixXd a = result.implied.llt().solve(sample);
  const Eigen::MatrixXd resid = a - Eigen::MatrixXd::Identity(p, p);
  fi.gfi = 1.0 - (resid * resid).trace() / (a * a).trace();

  Eigen::LLT<Eigen::MatrixXd> ls(sample);
  if (ls.info() != Eigen::Success || (sample.diagonal().array() <= 0.0).any()) {
    throw Error(ErrorCode::kBaselineFitFailed, "independence model needs a positive definite S");
  }
  const double ld_s = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
  fi.baseline_chi_square = nm1 * (sample.diagonal().array().log().sum() - ld_s);
  fi.baseline_degrees_of_freedom = static_cast<int>(p * (p - 1) / 2);
  const double denom = fi.baseline_chi_square - fi.degrees_of_freedom;
  if (denom == 0.0) {
    throw Error(ErrorCode::kBaselineFitFailed, "baseline chi-square equals model df");
  }
  fi.ifi = (fi.baseline_chi_square - fi.chi_square) / denom;
  const double df = fi.degrees_of_freedom;
  fi.rmsea = df > 0 ? std::sqrt(std::max(fi.chi_square - df, 0.0) / (df * nm1)) : 0.0;
  return fi;
}

}  // namespace psychoprobe
