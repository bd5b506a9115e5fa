#include "psychoprobe/psychometrics/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <boost/math/distributions/students_t.hpp>

#include "psychoprobe/error.hpp"

namespace psychoprobe {
namespace {

std::vector<double> present(const std::vector<double>& v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (double x : v) {
    if (!is_missing(x)) out.push_back(x);
  }
  return out;
}

void mean_var(const std::vector<double>& v, double& mean, double& var) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
}

}  // namespace

double student_t_two_sided_p(double t, double df) {
  if (std::isinf(df)) df = 1e300;
  const boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return std::min(1.0, std::max(0.0, p));
}

WelchResult welch_t_test(const std::vector<double>& a_raw, const std::vector<double>& b_raw) {
  const auto a = present(a_raw);
  const auto b = present(b_raw);
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCode::kDegenerateSample, "each sample needs at least 2 values (got " +
                                                  std::to_string(a.size()) + " and " +
                                                  std::to_string(b.size()) + ")");
  }
  WelchResult w;
  w.n_a = a.size();
  w.n_b = b.size();
  double va = 0, vb = 0;
  mean_var(a, w.mean_a, va);
  mean_var(b, w.mean_b, vb);
  const double qa = va / static_cast<double>(w.n_a);
  const double qb = vb / static_cast<double>(w.n_b);
  if (qa + qb <= 0.0) throw Error(ErrorCode::kDegenerateSample, "both samples have zero variance");
  w.t = (w.mean_a - w.mean_b) / std::sqrt(qa + qb);
  // Satterthwaite in ratio form, so equal n and variances give 2n - 2 exactly.
  const double nu_a = static_cast<double>(w.n_a - 1), nu_b = static_cast<double>(w.n_b - 1);
  if (qb == 0.0) {
    w.df = nu_a;
  } else {
    const double rho = qa / qb;
    w.df = nu_a * nu_b * (1.0 + rho) * (1.0 + rho) / (rho * rho * nu_b + nu_a);
  }
  w.p = student_t_two_sided_p(w.t, w.df);
  return w;
}

std::string apa_number(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  else if (s.rfind("-0.", 0) == 0) s.erase(1, 1);
  // "-.00" reads as zero
  if (s[0] == '-' && s.find_first_not_of("-.0") == std::string::npos) s.erase(0, 1);
  return s;
}

std::string format_welch(const WelchResult& w) {
  char head[64];
  std::snprintf(head, sizeof head, "t(%.1f) = %.2f, ", w.df, w.t);
  return head + (w.p < 0.001 ? std::string("p < .001") : "p = " + apa_number(w.p, 3));
}

Correlation pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Correlation c;
  double mx = 0, my = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (is_missing(x(i)) || is_missing(y(i))) continue;
    mx += x(i);
    my += y(i);
    ++c.n_pairs;
  }
  if (c.n_pairs < 3) {
    c.note = "fewer than 3 complete pairs";
    return c;
  }
  mx /= static_cast<double>(c.n_pairs);
  my /= static_cast<double>(c.n_pairs);
  double sxy = 0, sxx = 0, syy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (is_missing(x(i)) || is_missing(y(i))) continue;
    const double dx = x(i) - mx, dy = y(i) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    c.note = "constant variable";
    return c;
  }
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return c;
}

CorrelationMatrix correlation_matrix(const DataTable& data) {
  const Eigen::Index p = data.cols();
  CorrelationMatrix out;
  out.labels = data.labels;
  out.r = Eigen::MatrixXd::Constant(p, p, kMissing);
  out.n_pairs = Eigen::MatrixXi::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i; j < p; ++j) {
      const Correlation c = pearson(data.values.col(i), data.values.col(j));
      out.n_pairs(i, j) = out.n_pairs(j, i) = static_cast<int>(c.n_pairs);
      if (c.r) out.r(i, j) = out.r(j, i) = i == j ? 1.0 : *c.r;
    }
  }
  return out;
}

}  // namespace psychoprobe
