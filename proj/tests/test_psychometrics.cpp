#include <doctest.h>

#include <cmath>
#include <random>

#include "psychoprobe/error.hpp"
#include "psychoprobe/psychometrics/cfa.hpp"
#include "psychoprobe/psychometrics/covariance.hpp"
#include "psychoprobe/psychometrics/inference.hpp"
#include "psychoprobe/psychometrics/reliability.hpp"
#include "test_support.hpp"

using namespace psychoprobe;
using testsupport::to_table;

namespace {

CovarianceMatrix cov_of(const Eigen::MatrixXd& m, std::size_t n = 100) {
  return covariance_from_values(testsupport::labels("x", m.rows()), m, n);
}

Eigen::MatrixXd two_by_two(double r) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, r, r, 1.0;
  return m;
}

// Independent two-pass covariance used as the oracle.
double brute_cov(const Eigen::MatrixXd& x, int i, int j) {
  double mi = 0, mj = 0;
  for (int r = 0; r < x.rows(); ++r) {
    mi += x(r, i);
    mj += x(r, j);
  }
  mi /= x.rows();
  mj /= x.rows();
  double s = 0;
  for (int r = 0; r < x.rows(); ++r) s += (x(r, i) - mi) * (x(r, j) - mj);
  return s / (x.rows() - 1);
}

CfaSpec simple_spec(int m, int per_factor) {
  CfaSpec spec;
  for (int f = 0; f < m; ++f) {
    for (int i = 0; i < per_factor; ++i) {
      spec.add_item("x" + std::to_string(f * per_factor + i + 1), "F" + std::to_string(f + 1));
    }
  }
  return spec;
}

}  // namespace

TEST_SUITE("covariance") {
  TEST_CASE("identical columns share their variance") {
    Eigen::MatrixXd x(5, 2);
    x.col(0) << 1, 2, 4, 4, 5;
    x.col(1) = x.col(0);
    const auto c = covariance_matrix(to_table(x));
    CHECK(c.values(0, 1) == doctest::Approx(c.values(0, 0)).epsilon(1e-15));
    CHECK(c.n == 5);
  }

  TEST_CASE("constant column is flagged and kept") {
    Eigen::MatrixXd x(4, 2);
    x << 1, 3, 2, 3, 3, 3, 5, 3;
    const auto c = covariance_matrix(to_table(x));
    REQUIRE(c.zero_variance.size() == 1);
    CHECK(c.zero_variance[0] == "x2");
    CHECK(c.size() == 2);
    CHECK(c.values(1, 1) == 0.0);
  }

  TEST_CASE("matches a two-pass oracle on 1000x5") {
    const Eigen::MatrixXd x = testsupport::standard_normal(1000, 5, 11) * 2.0;
    const auto c = covariance_matrix(to_table(x));
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) CHECK(std::abs(c.values(i, j) - brute_cov(x, i, j)) < 1e-10);
    }
    CHECK((c.values - c.values.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("listwise and pairwise report their n") {
    Eigen::MatrixXd x(5, 2);
    x << 1, 2, 2, kMissing, 3, 5, 4, 3, kMissing, 1;
    const auto lw = covariance_matrix(to_table(x), MissingData::kListwise);
    CHECK(lw.n == 3);
    const auto pw = covariance_matrix(to_table(x), MissingData::kPairwise);
    CHECK(pw.pair_n(0, 0) == 4);
    CHECK(pw.pair_n(0, 1) == 3);
    CHECK(pw.n == 3);
  }

  TEST_CASE("fewer than three rows is rejected") {
    Eigen::MatrixXd x(2, 2);
    x << 1, 2, 3, 4;
    CHECK_THROWS_AS(covariance_matrix(to_table(x)), Error);
    try {
      covariance_matrix(to_table(x));
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTooFewRows);
    }
  }
}

TEST_SUITE("reliability") {
  TEST_CASE("alpha closed forms") {
    CHECK(std::abs(cronbach_alpha(cov_of(two_by_two(0.5))) - 2.0 / 3.0) < 1e-9);
    CHECK(std::abs(cronbach_alpha(cov_of(two_by_two(0.3))) - 0.6 / 1.3) < 1e-12);
    CHECK(std::abs(cronbach_alpha(cov_of(Eigen::MatrixXd::Identity(3, 3)))) < 1e-12);
  }

  TEST_CASE("alpha from data generated with r = .5") {
    const Eigen::MatrixXd x = testsupport::exact_sample(two_by_two(0.5), 400, 3);
    CHECK(std::abs(cronbach_alpha(covariance_matrix(to_table(x))) - 2.0 / 3.0) < 1e-9);
  }

  TEST_CASE("alpha error cases") {
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    CHECK_THROWS_WITH_AS(cronbach_alpha(cov_of(one)), doctest::Contains("TooFewItems"), Error);
    CHECK_THROWS_WITH_AS(cronbach_alpha(cov_of(Eigen::MatrixXd::Zero(3, 3))),
                         doctest::Contains("ZeroTotalVariance"), Error);
  }

  TEST_CASE("glb on 2x2 equals 2r/(1+r)") {
    for (double r : {0.5, 0.3, 0.8}) {
      CHECK(std::abs(greatest_lower_bound(cov_of(two_by_two(r))) - 2 * r / (1 + r)) < 1e-6);
    }
  }

  TEST_CASE("glb of a rank-one matrix is 1") {
    Eigen::VectorXd l(4);
    l << 0.9, 0.5, 1.2, 0.7;
    CHECK(std::abs(greatest_lower_bound(cov_of(l * l.transpose())) - 1.0) < 1e-6);
  }

  TEST_CASE("glb matches an SDP solver on fixed matrices") {
    // Reference values from an interior-point SDP solve (max tr(T), C - T psd).
    Eigen::MatrixXd a(4, 4);
    a << 1.0, .6, .5, .3, .6, 1.2, .4, .2, .5, .4, .9, .45, .3, .2, .45, 1.1;
    CHECK(std::abs(greatest_lower_bound(cov_of(a)) - 0.77987884739774) < 1e-6);
    Eigen::MatrixXd b(5, 5);
    b << 2.0, .8, -.3, .5, .1, .8, 1.5, .2, .6, .3, -.3, .2, 1.0, .1, .4, .5, .6, .1, 1.3, .7, .1,
        .3, .4, .7, 1.6;
    CHECK(std::abs(greatest_lower_bound(cov_of(b)) - 0.7899870705787) < 1e-6);
  }

  TEST_CASE("glb on singular matrices") {
    // null vector with full support: every error variance is forced to zero
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::MatrixXd w(12, 11);
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = z(rng);
      CHECK(std::abs(greatest_lower_bound(cov_of(w * w.transpose())) - 1.0) < 1e-9);
    }

    // singular block next to a positive definite block: only the latter
    // carries error variance, and it matches the block solved alone
    Eigen::MatrixXd w(3, 2);
    w << 1.0, 0.2, -0.5, 0.8, 0.3, 1.1;
    Eigen::MatrixXd pd(3, 3);
    pd << 1.0, .6, .5, .6, 1.2, .4, .5, .4, .9;
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(6, 6);
    c.topLeftCorner(3, 3) = w * w.transpose();
    c.bottomRightCorner(3, 3) = pd;
    const Eigen::VectorXd theta = glb_error_variances(cov_of(c));
    const Eigen::VectorXd alone = glb_error_variances(cov_of(pd));
    CHECK(theta.head(3).cwiseAbs().maxCoeff() == 0.0);
    CHECK((theta.tail(3) - alone).cwiseAbs().maxCoeff() < 1e-7);
  }

  TEST_CASE("glb rejects an indefinite matrix") {
    CHECK_THROWS_WITH_AS(greatest_lower_bound(cov_of(two_by_two(1.5))),
                         doctest::Contains("NotPSDInput"), Error);
  }

  TEST_CASE("alpha <= glb <= 1 on random PSD matrices") {
    std::mt19937_64 rng(2718);
    std::uniform_int_distribution<int> size(3, 20);
    for (int k = 0; k < 300; ++k) {
      const auto c = cov_of(testsupport::random_psd(size(rng), rng));
      const double a = cronbach_alpha(c), g = greatest_lower_bound(c);
      CHECK(a <= g + 1e-6);
      CHECK(g <= 1.0 + 1e-6);
    }
  }

  TEST_CASE("omega formula on an exact one-factor matrix") {
    const Eigen::MatrixXd l = testsupport::simple_lambda(1, 4, 0.7);
    const Eigen::MatrixXd s =
        testsupport::factor_sigma(l, Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Constant(4, 0.51));
    CHECK(std::abs(mcdonald_omega(cov_of(s, 500)) - 7.84 / 9.88) < 1e-6);
  }

  TEST_CASE("omega on 100000 simulated rows") {
    const Eigen::MatrixXd l = testsupport::simple_lambda(1, 4, 0.7);
    const Eigen::MatrixXd s =
        testsupport::factor_sigma(l, Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Constant(4, 0.51));
    const Eigen::MatrixXd x = testsupport::simulate_normal(s, 100000, 5);
    CHECK(std::abs(mcdonald_omega(covariance_matrix(to_table(x))) - 7.84 / 9.88) < 0.01);
  }

  TEST_CASE("parallel items give omega close to alpha") {
    const Eigen::MatrixXd l = testsupport::simple_lambda(1, 6, 0.6);
    const Eigen::MatrixXd s =
        testsupport::factor_sigma(l, Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Constant(6, 0.64));
    const auto c = covariance_matrix(to_table(testsupport::simulate_normal(s, 10000, 17)));
    CHECK(std::abs(mcdonald_omega(c) - cronbach_alpha(c)) < 1e-3);
  }

  TEST_CASE("omega near zero without a common factor") {
    const auto c = covariance_matrix(to_table(testsupport::standard_normal(5000, 5, 23)));
    CHECK(mcdonald_omega(c) < 0.05);
  }

  TEST_CASE("reverse-keying every item leaves the coefficients unchanged") {
    const Eigen::MatrixXd l = testsupport::simple_lambda(1, 5, 0.8);
    const Eigen::MatrixXd s =
        testsupport::factor_sigma(l, Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Constant(5, 0.6));
    Eigen::MatrixXd x = (testsupport::simulate_normal(s, 300, 4).array() + 3.0).round().max(1).min(5);
    const Eigen::MatrixXd keyed = (6.0 - x.array()).matrix();
    const auto c1 = covariance_matrix(to_table(x));
    const auto c2 = covariance_matrix(to_table(keyed));
    CHECK(cronbach_alpha(c1) == doctest::Approx(cronbach_alpha(c2)).epsilon(1e-12));
    CHECK(greatest_lower_bound(c1) == doctest::Approx(greatest_lower_bound(c2)).epsilon(1e-9));
    CHECK(mcdonald_omega(c1) == doctest::Approx(mcdonald_omega(c2)).epsilon(1e-6));
  }
}

TEST_SUITE("correlation") {
  TEST_CASE("self and negation") {
    Eigen::VectorXd x(6);
    x << 1, 4, 2, 5, 3, 3.5;
    CHECK(*pearson(x, x).r == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(*pearson(x, -x).r == doctest::Approx(-1.0).epsilon(1e-15));
  }

  TEST_CASE("recovers a population correlation of .6") {
    const Eigen::MatrixXd x = testsupport::simulate_normal(two_by_two(0.6), 10000, 31);
    CHECK(std::abs(*pearson(x.col(0), x.col(1)).r - 0.6) < 0.03);
  }

  TEST_CASE("invariant under positive affine maps") {
    const Eigen::MatrixXd x = testsupport::simulate_normal(two_by_two(0.4), 200, 8);
    const double r = *pearson(x.col(0), x.col(1)).r;
    const Eigen::VectorXd y = (x.col(1).array() * 3.5 + 10.0).matrix();
    const Eigen::VectorXd z = (x.col(0).array() * 0.2 - 4.0).matrix();
    CHECK(std::abs(*pearson(z, y).r - r) < 1e-12);
  }

  TEST_CASE("too few pairs and constant columns are undefined") {
    Eigen::VectorXd a(4), b(4), c(4);
    a << 1, 2, kMissing, kMissing;
    b << 2, 1, 3, 4;
    c << 2, 2, 2, 2;
    CHECK_FALSE(pearson(a, b).r.has_value());
    CHECK(pearson(a, b).n_pairs == 2);
    CHECK_FALSE(pearson(b, c).r.has_value());
  }

  TEST_CASE("matrix is symmetric with unit diagonal") {
    const auto t = to_table(testsupport::standard_normal(50, 4, 9));
    const auto m = correlation_matrix(t);
    for (int i = 0; i < 4; ++i) {
      CHECK(m.r(i, i) == 1.0);
      for (int j = 0; j < 4; ++j) CHECK(m.r(i, j) == m.r(j, i));
    }
  }
}

TEST_SUITE("welch") {
  TEST_CASE("identical samples") {
    const std::vector<double> a = {1, 2, 3, 4.5, 2.2};
    const auto w = welch_t_test(a, a);
    CHECK(w.t == 0.0);
    CHECK(w.p == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("equal n and variance gives the pooled df exactly") {
    const std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 3, 4, 5, 6};
    CHECK(welch_t_test(a, b).df == 8.0);
  }

  TEST_CASE("matches a reference implementation") {
    // Reference t, p, df computed with a standard statistics package on the
    // same inputs.
    std::vector<double> a(1000), b(1000);
    const double sd_pattern = std::sqrt(1000.0 * 1001.0 / 12.0);
    const double d = 2.83 * std::sqrt((0.25 * 0.25 + 0.22 * 0.22) / 1000.0);
    for (int i = 0; i < 1000; ++i) {
      const double z = (i - 499.5) / sd_pattern;
      a[static_cast<std::size_t>(i)] = 0.63 + 0.25 * z;
      b[static_cast<std::size_t>(i)] = (0.63 - d) + 0.22 * z;
    }
    const auto w = welch_t_test(a, b);
    CHECK(std::abs(w.t - 2.8300000000000125) < 1e-6);
    CHECK(std::abs(w.p - 0.004702079193106524) < 1e-6);
    CHECK(std::abs(w.df - 1966.216157956475) < 1e-6);
    CHECK(format_welch(w) == "t(1966.2) = 2.83, p = .005");
  }

  TEST_CASE("unequal n against a reference implementation") {
    const std::vector<double> a = {3.101, 3.339, 2.881, 2.388, 2.736, 2.307, 3.148, 4.172, 2.706, 2.604,
                                   3.492, 3.386, 3.184, 2.356, 3.077, 3.656, 2.025, 2.734, 1.579, 2.068,
                                   1.627, 2.912, 2.086, 3.317, 3.225, 2.95,  1.087, 2.669, 3.061, 3.191,
                                   1.876, 2.718, 2.317, 2.453, 3.949, 2.454, 3.074};
    const std::vector<double> b = {3.85,  1.941, 2.555, 2.844, 2.783, 1.107, 2.799, 4.466, 0.689, 3.817,
                                   2.855, 1.866, 5.301, 3.691, 1.141, 2.797, 3.45,  2.455, 3.588, 2.614,
                                   3.567, 4.57,  1.822, 2.964, 2.098, 2.865, 1.157, 1.947, 2.445, 3.868,
                                   4.189, 0.979, 1.667, 3.541, 0.11,  2.098, 2.574, 4.334, 3.596, 2.275,
                                   2.221, 2.375, 4.681, 2.144, 2.305, 3.158, 2.543, 2.444, 1.252, 2.685,
                                   2.123, 4.216};
    const auto w = welch_t_test(a, b);
    CHECK(std::abs(w.t - 0.18374688948811857) < 1e-9);
    CHECK(std::abs(w.p - 0.8546511728556621) < 1e-9);
    CHECK(std::abs(w.df - 84.70522911921398) < 1e-9);
  }

  TEST_CASE("t tail probabilities") {
    CHECK(std::abs(student_t_two_sided_p(2.83, 1968.5) - 0.004702024205830743) < 1e-10);
    CHECK(std::abs(student_t_two_sided_p(1.0, 1.0) - 0.5) < 1e-10);
    CHECK(std::abs(student_t_two_sided_p(0.5, 3.7) - 0.645335633319932) < 1e-10);
    CHECK(std::abs(student_t_two_sided_p(4.0, 10.0) - 0.0025183326247366924) < 1e-10);
    CHECK(std::abs(student_t_two_sided_p(-10.0, 2.5) - 0.004441495767307422) < 1e-10);
  }

  TEST_CASE("degenerate samples") {
    CHECK_THROWS_WITH_AS(welch_t_test({1.0}, {1.0, 2.0}), doctest::Contains("DegenerateSample"), Error);
    CHECK_THROWS_WITH_AS(welch_t_test({2.0, 2.0}, {1.0, 1.0}), doctest::Contains("DegenerateSample"),
                         Error);
  }

  TEST_CASE("APA number formatting") {
    CHECK(apa_number(0.63) == ".63");
    CHECK(apa_number(-0.071) == "-.07");
    CHECK(apa_number(-0.001) == ".00");
    CHECK(apa_number(1.2) == "1.20");
    CHECK(apa_number(0.0047, 3) == ".005");
  }
}

TEST_SUITE("cfa") {
  TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> z;
    const Eigen::MatrixXd lt = testsupport::simple_lambda(3, 4, 0.7);
    const Eigen::MatrixXd s = testsupport::factor_sigma(lt, testsupport::equicorrelated(3, 0.3),
                                                        Eigen::VectorXd::Constant(12, 0.51));
    std::vector<int> pattern;
    for (int i = 0; i < 12; ++i) pattern.push_back(i / 4);
    const CfaModel model(s, pattern, 3);
    for (int point = 0; point < 10; ++point) {
      Eigen::VectorXd x = model.start_values();
      for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += 0.2 * z(rng);
      REQUIRE(std::isfinite(model.objective(x)));
      const Eigen::VectorXd g = model.gradient(x);
      Eigen::VectorXd fd(x.size());
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = 1e-6;
        Eigen::VectorXd xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        fd(k) = (model.objective(xp) - model.objective(xm)) / (2 * h);
      }
      CHECK((g - fd).norm() / fd.norm() < 1e-5);
    }
  }

  TEST_CASE("perfect-fit fixed point recovers the generating loadings") {
    // Five factors sized like the Big Five item counts.
    const std::vector<int> sizes = {8, 9, 9, 8, 10};
    CfaSpec spec;
    std::vector<double> truth;
    int item = 0;
    for (std::size_t f = 0; f < sizes.size(); ++f) {
      for (int i = 0; i < sizes[f]; ++i) {
        spec.add_item("x" + std::to_string(++item), "F" + std::to_string(f + 1));
        truth.push_back(0.45 + 0.05 * ((item * 7) % 8));
      }
    }
    Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(item, 5);
    Eigen::VectorXd theta(item);
    for (int i = 0; i < item; ++i) {
      lambda(i, spec.item_factor[static_cast<std::size_t>(i)]) = truth[static_cast<std::size_t>(i)];
      theta(i) = 1.0 - truth[static_cast<std::size_t>(i)] * truth[static_cast<std::size_t>(i)];
    }
    Eigen::MatrixXd phi = testsupport::equicorrelated(5, 0.2);
    phi(0, 3) = phi(3, 0) = -0.3;
    const Eigen::MatrixXd s = testsupport::factor_sigma(lambda, phi, theta);
    const auto r = fit_cfa(covariance_from_values(testsupport::labels("x", item), s, 1000), spec);
    REQUIRE(r.converged);
    for (int i = 0; i < item; ++i) CHECK(std::abs(r.loadings(i) - truth[static_cast<std::size_t>(i)]) < 1e-4);
    CHECK(std::abs(r.phi(0, 3) + 0.3) < 1e-4);
    CHECK(r.chi_square < 1e-6);
    const auto fi = fit_indices(r, s, 1000);
    CHECK(std::abs(fi.gfi - 1.0) < 1e-6);
    CHECK(fi.rmsea == 0.0);
  }

  TEST_CASE("loadings recovered from 10000 simulated rows") {
    const Eigen::MatrixXd lt = testsupport::simple_lambda(3, 4, 0.7);
    const Eigen::MatrixXd s = testsupport::factor_sigma(lt, testsupport::equicorrelated(3, 0.3),
                                                        Eigen::VectorXd::Constant(12, 0.51));
    const auto data = to_table(testsupport::simulate_normal(s, 10000, 1234));
    const auto r = fit_cfa(data, simple_spec(3, 4));
    REQUIRE(r.converged);
    for (int i = 0; i < 12; ++i) CHECK(std::abs(r.loadings(i) - 0.7) < 0.05);
    CHECK(std::abs(r.phi(0, 1) - 0.3) < 0.05);
    CHECK(r.degrees_of_freedom == 51);

    const auto se = robust_standard_errors(r, data);
    REQUIRE(se.robust_se.size() == 27);
    for (Eigen::Index k = 0; k < se.robust_se.size(); ++k) {
      CHECK(se.robust_se(k) > 0.0);
      CHECK(se.robust_se(k) < 1.0);
      // correctly specified normal data: sandwich ~ inverse information
      CHECK(std::abs(se.robust_se(k) / se.naive_se(k) - 1.0) < 0.10);
    }
    CHECK(se.names.front() == "lambda:x1");
    CHECK(se.names.back() == "phi:F2~F3");
  }

  TEST_CASE("heavy-tailed rows inflate robust loading SEs") {
    // Multivariate Student t(3) rows scaled to the model covariance: every
    // variable shares the heavy tail, so the normal-theory SEs are too small.
    // (Tails confined to independent unique factors would leave loading SEs
    // asymptotically unaffected.)
    const Eigen::MatrixXd lt = testsupport::simple_lambda(2, 4, 0.7);
    const Eigen::MatrixXd s = testsupport::factor_sigma(lt, testsupport::equicorrelated(2, 0.3),
                                                        Eigen::VectorXd::Constant(8, 0.51));
    Eigen::MatrixXd x = testsupport::simulate_normal(s, 10000, 77);
    std::mt19937_64 rng(78);
    std::chi_squared_distribution<double> chi(3.0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) *= std::sqrt((3.0 - 2.0) / chi(rng));
    const auto data = to_table(x);
    const auto fit = fit_cfa(data, simple_spec(2, 4));
    REQUIRE(fit.converged);
    const auto se = robust_standard_errors(fit, data);
    for (int k = 0; k < 8; ++k) CHECK(se.robust_se(k) > se.naive_se(k));
  }

  TEST_CASE("near-collinear factors produce the non-positive-definite diagnostic") {
    const Eigen::MatrixXd lt = testsupport::simple_lambda(3, 4, 0.7);
    Eigen::MatrixXd phi = testsupport::equicorrelated(3, 0.3);
    phi(0, 1) = phi(1, 0) = 1.05;
    const Eigen::MatrixXd s = testsupport::factor_sigma(lt, phi, Eigen::VectorXd::Constant(12, 0.51));
    const auto data = to_table(testsupport::exact_sample(s, 2000, 8));
    const auto r = fit_cfa(data, simple_spec(3, 4));
    CHECK_FALSE(r.converged);
    CHECK(r.failure.find("one eigenvalue was negative") != std::string::npos);
    REQUIRE(r.offending_eigenvalue.has_value());
    CHECK(*r.offending_eigenvalue < -1e-8);
    CHECK_THROWS_WITH_AS(fit_indices(r, r.sample, 2000), doctest::Contains("NotConverged"), Error);
  }

  TEST_CASE("uniform items are excluded before fitting") {
    const Eigen::MatrixXd lt = testsupport::simple_lambda(2, 4, 0.7);
    const Eigen::MatrixXd s = testsupport::factor_sigma(lt, testsupport::equicorrelated(2, 0.3),
                                                        Eigen::VectorXd::Constant(8, 0.51));
    Eigen::MatrixXd x(2000, 9);
    x.leftCols(8) = testsupport::simulate_normal(s, 2000, 3);
    x.col(8).setConstant(3.0);
    CfaSpec spec = simple_spec(2, 4);
    spec.add_item("x9", "F2");
    const auto r = fit_cfa(to_table(x), spec);
    CHECK(r.converged);
    REQUIRE(r.excluded.size() == 1);
    CHECK(r.excluded[0].item == "x9");
    CHECK(r.excluded[0].reason == "uniform");
    CHECK(r.items.size() == 8);
  }

  TEST_CASE("a factor with one item is invalid") {
    CfaSpec spec = simple_spec(1, 3);
    spec.add_item("x4", "lonely");
    const auto c = cov_of(Eigen::MatrixXd::Identity(4, 4));
    CHECK_THROWS_WITH_AS(fit_cfa(c, spec), doctest::Contains("SpecInvalid"), Error);
  }

  TEST_CASE("chi-square is (n - 1) times the discrepancy") {
    const Eigen::MatrixXd lt = testsupport::simple_lambda(2, 3, 0.6);
    const Eigen::MatrixXd pop = testsupport::factor_sigma(lt, testsupport::equicorrelated(2, 0.4),
                                                          Eigen::VectorXd::Constant(6, 0.64));
    const auto x = testsupport::simulate_normal(pop, 300, 12);
    const auto c = covariance_matrix(to_table(x));
    auto c2 = c;
    c2.n = 3000;
    const auto r1 = fit_cfa(c, simple_spec(2, 3));
    const auto r2 = fit_cfa(c2, simple_spec(2, 3));
    REQUIRE(r1.converged);
    CHECK(r1.chi_square >= 0.0);
    CHECK(r1.f_ml == r2.f_ml);
    CHECK(r1.chi_square == 299.0 * r1.f_ml);
    CHECK(r2.chi_square == 2999.0 * r2.f_ml);
  }

  TEST_CASE("a model that cannot reproduce the covariances has IFI near 0") {
    // 15 disjoint correlated pairs: one factor can absorb at most one pair, so
    // the model chi-square stays close to the independence baseline.
    const int pairs = 15;
    Eigen::MatrixXd pop = Eigen::MatrixXd::Identity(2 * pairs, 2 * pairs);
    for (int k = 0; k < pairs; ++k) pop(2 * k, 2 * k + 1) = pop(2 * k + 1, 2 * k) = 0.4;
    const auto c = covariance_matrix(to_table(testsupport::simulate_normal(pop, 5000, 41)));
    const auto r = fit_cfa(c, CfaSpec::single_factor("g", c.labels));
    REQUIRE(r.converged);
    const auto fi = fit_indices(r, c.values, c.n);
    CHECK(fi.chi_square < fi.baseline_chi_square);
    CHECK(std::abs(fi.ifi) < 0.1);
    CHECK(fi.gfi <= 1.0);
    CHECK(fi.rmsea >= 0.0);
  }

  TEST_CASE("baseline needs a positive definite sample matrix") {
    const Eigen::MatrixXd lt = testsupport::simple_lambda(1, 3, 0.7);
    const Eigen::MatrixXd s = testsupport::factor_sigma(lt, Eigen::MatrixXd::Identity(1, 1),
                                                        Eigen::VectorXd::Constant(3, 0.51));
    const auto r = fit_cfa(cov_of(s, 200), CfaSpec::single_factor("g", testsupport::labels("x", 3)));
    REQUIRE(r.converged);
    Eigen::MatrixXd bad = s;
    bad(0, 0) = 0.0;
    CHECK_THROWS_AS(fit_indices(r, bad, 200), Error);
  }
}
