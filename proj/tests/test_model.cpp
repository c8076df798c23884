#include <doctest.h>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "oracles.hpp"
#include "stmix/error.hpp"
#include "stmix/model.hpp"
#include "stmix/special.hpp"

using namespace stmix;

namespace {

std::vector<ClusterParams> random_clusters(Rng& rng, int k, int l, const DfGrid& grid) {
  std::vector<ClusterParams> clusters(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    clusters[static_cast<std::size_t>(c)].dispersion = oracles::random_spd(rng, l, 0.2);
    clusters[static_cast<std::size_t>(c)].nugget2 = 0.05 + rng.uniform();
    clusters[static_cast<std::size_t>(c)].df =
        grid.value(static_cast<int>(rng.uniform() * grid.size()) % grid.size());
  }
  return clusters;
}

Eigen::VectorXd random_simplex(Rng& rng, int k) {
  Eigen::VectorXd v(k);
  for (int i = 0; i < k; ++i) v[i] = rng.gamma(1.0, 1.0);
  return v / v.sum();
}

}  // namespace

TEST_CASE("stick breaking on worked examples") {
  Eigen::VectorXd sticks(3);
  sticks << 0.3, 0.5, 1.0;
  const Eigen::VectorXd pi = stick_breaking(sticks);
  CHECK(pi[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(pi[1] == doctest::Approx(0.35).epsilon(1e-15));
  CHECK(pi[2] == doctest::Approx(0.35).epsilon(1e-15));

  sticks << 1.0, 0.4, 1.0;
  const Eigen::VectorXd first = stick_breaking(sticks);
  CHECK(first[0] == 1.0);
  CHECK(first[1] == 0.0);
  CHECK(first[2] == 0.0);

  sticks << 0.3, 0.5, 0.9;
  CHECK_THROWS_AS(stick_breaking(sticks), ArgumentError);
}

TEST_CASE("stick breaking sums to one exactly over random draws") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform() * 9);
    Eigen::VectorXd sticks(k);
    for (int i = 0; i + 1 < k; ++i) sticks[i] = rng.uniform();
    sticks[k - 1] = 1.0;
    const Eigen::VectorXd pi = stick_breaking(sticks);
    CHECK(pi.sum() == 1.0);  // exact, not approximate
    CHECK(pi.minCoeff() >= 0.0);
    // Representation invariance: rebuild the sticks and re-apply.
    const Eigen::VectorXd rebuilt = stick_breaking(sticks_from_weights(pi));
    CHECK((rebuilt - pi).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("mean surface matches the naive triple sum and is linear in beta") {
  const auto toy = oracles::toy_basis(5, 4, 3, 3, 10, 4, 4, 2);  // 12 sites
  REQUIRE(toy.basis.p_spatial() >= 9);
  Rng rng(55);
  MeanCoefficients coeffs = MeanCoefficients::zeros(toy.basis.p());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) coeffs.beta[i][j] = rng.normal_vector(toy.basis.p());

  const Eigen::Vector2d x0_row = toy.basis.cov_scale.row(toy.covariate, 2);
  const Eigen::VectorXd mu = mean_surface_at(coeffs, toy.basis, x0_row, 7);
  for (int site = 0; site < toy.basis.n_sites(); ++site) {
    const double expected = oracles::triple_sum_mean(coeffs, toy.basis, x0_row, 7, site);
    CHECK(mu[site] == doctest::Approx(expected).epsilon(1e-10));
  }

  MeanCoefficients doubled = coeffs;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) doubled.beta[i][j] *= 2.0;
  const Eigen::VectorXd mu2 = mean_surface_at(doubled, toy.basis, x0_row, 7);
  CHECK((mu2 - 2.0 * mu).cwiseAbs().maxCoeff() == 0.0);

  const MeanCoefficients zero = MeanCoefficients::zeros(toy.basis.p());
  CHECK(mean_surface_at(zero, toy.basis, x0_row, 7).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean surface rejects uncovered years") {
  const auto toy = oracles::toy_basis(6, 2, 2, 3, 8, 4, 4, 2, /*horizon=*/2);
  const MeanCoefficients coeffs = MeanCoefficients::zeros(toy.basis.p());
  // Fit window 3 years + 2 horizon = 5 covered years = 40 weeks.
  CHECK_NOTHROW(mean_surface(coeffs, toy.basis, toy.covariate, 40));
  CHECK_THROWS_AS(mean_surface(coeffs, toy.basis, toy.covariate, 41), CoverageError);
}

TEST_CASE("low-rank t density: scalar case reduces to a univariate t") {
  ClusterParams theta;
  theta.dispersion = Eigen::MatrixXd::Zero(0, 0);
  theta.nugget2 = 0.49;
  theta.df = 5.0;
  const Eigen::MatrixXd eofs(1, 0);
  Eigen::VectorXd x(1);
  x << 0.8;
  const double scale = std::sqrt((5.0 - 2.0) / 5.0 * 0.49);
  const double expected = student_t_logpdf(0.8 / scale, 5.0) - std::log(scale);
  CHECK(lowrank_t_logdensity(x, theta, eofs) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("low-rank t density matches the dense oracle") {
  Rng rng(77);
  const DfGrid grid = DfGrid::paper_default();
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 48);
    const int l = 1 + static_cast<int>(rng.uniform() * std::min(10, n));
    const Eigen::MatrixXd h = oracles::random_orthonormal(rng, n, l);
    ClusterParams theta;
    theta.dispersion = oracles::random_spd(rng, l, 0.1);
    theta.nugget2 = 0.01 + rng.uniform();
    theta.df = grid.value(static_cast<int>(rng.uniform() * grid.size()) % grid.size());
    const Eigen::VectorXd x = 3.0 * rng.normal_vector(n);

    const double c = (theta.df - 2.0) / theta.df;
    const Eigen::MatrixXd dispersion =
        c * (h * theta.dispersion * h.transpose() +
             theta.nugget2 * Eigen::MatrixXd::Identity(n, n));
    const double expected = oracles::dense_mvt_logpdf(x, dispersion, theta.df);
    CHECK(std::fabs(lowrank_t_logdensity(x, theta, h) - expected) < 1e-8);
  }
}

TEST_CASE("at the df grid maximum the density approaches the Gaussian limit") {
  // The log-density gap to the Gaussian scales as O(1/a); at the grid maximum
  // a = 40 the bivariate sup gap over moderate points sits near 0.03.
  Rng rng(78);
  const int n = 2, l = 2;
  const Eigen::MatrixXd h = oracles::random_orthonormal(rng, n, l);
  ClusterParams theta;
  theta.dispersion = oracles::random_spd(rng, l, 0.2);
  theta.nugget2 = 0.3;
  const Eigen::MatrixXd cov =
      h * theta.dispersion * h.transpose() + theta.nugget2 * Eigen::MatrixXd::Identity(n, n);
  std::vector<Eigen::VectorXd> points;
  for (int i = 0; i < 20; ++i)
    points.push_back(stmix::psd_factor(cov) * (0.8 * rng.normal_vector(n)));

  const auto sup_gap = [&](double df) {
    theta.df = df;
    double worst = 0.0;
    for (const Eigen::VectorXd& x : points)
      worst = std::max(worst,
                       std::fabs(lowrank_t_logdensity(x, theta, h) -
                                 oracles::dense_mvn_logpdf(x, cov)));
    return worst;
  };

  double last = std::numeric_limits<double>::infinity();
  for (const double df : {5.0, 10.0, 20.0, 40.0}) {
    const double gap = sup_gap(df);
    CHECK(gap < last);  // the gap shrinks as df grows
    last = gap;
  }
  CHECK(sup_gap(40.0) < 0.06);
  // 1/a scaling: doubling the df roughly halves the gap.
  CHECK(sup_gap(40.0) < 0.65 * sup_gap(20.0));
}

TEST_CASE("non-PD dispersion raises a Cholesky error") {
  ClusterParams theta;
  theta.dispersion = -Eigen::MatrixXd::Identity(2, 2);
  theta.nugget2 = 0.1;
  theta.df = 5.0;
  Rng rng(3);
  const Eigen::MatrixXd h = oracles::random_orthonormal(rng, 4, 2);
  CHECK_THROWS_AS(lowrank_t_logdensity(rng.normal_vector(4), theta, h), NumericError);
}

TEST_CASE("mixture density: collapse cases and a high-precision oracle") {
  Rng rng(79);
  const int n = 10, l = 3;
  const Eigen::MatrixXd h = oracles::random_orthonormal(rng, n, l);
  const DfGrid grid = DfGrid::paper_default();
  const Eigen::VectorXd x = rng.normal_vector(n);

  SUBCASE("single component equals the component density") {
    const auto clusters = random_clusters(rng, 1, l, grid);
    const Eigen::VectorXd pi = Eigen::VectorXd::Ones(1);
    CHECK(dpm_logdensity(x, clusters, pi, h) == lowrank_t_logdensity(x, clusters[0], h));
  }

  SUBCASE("identical components collapse") {
    auto clusters = random_clusters(rng, 1, l, grid);
    clusters.push_back(clusters[0]);
    Eigen::VectorXd pi(2);
    pi << 0.3, 0.7;
    CHECK(dpm_logdensity(x, clusters, pi, h) ==
          doctest::Approx(lowrank_t_logdensity(x, clusters[0], h)).epsilon(1e-15));
  }

  SUBCASE("three components match direct long-double summation") {
    const auto clusters = random_clusters(rng, 3, l, grid);
    const Eigen::VectorXd pi = random_simplex(rng, 3);
    long double direct = 0.0L;
    for (int c = 0; c < 3; ++c)
      direct += static_cast<long double>(pi[c]) *
                std::exp(static_cast<long double>(
                    lowrank_t_logdensity(x, clusters[static_cast<std::size_t>(c)], h)));
    const double expected = static_cast<double>(std::log(direct));
    CHECK(dpm_logdensity(x, clusters, pi, h) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("site marginal integrates to one") {
  Rng rng(80);
  DfGrid grid{25, 400, 1};  // keep df >= 2.5 so the quadrature tail is controlled
  // Graded panels keep the adaptive rule honest on the near-origin peak.
  const double edges[] = {-2000.0, -100.0, -10.0, -2.0, 0.0, 2.0, 10.0, 100.0, 2000.0};
  const auto integrate = [&](const std::function<double(double)>& pdf) {
    double mass = 0.0;
    for (std::size_t i = 0; i + 1 < std::size(edges); ++i)
      mass += oracles::adaptive_simpson(pdf, edges[i], edges[i + 1], 1e-9);
    return mass;
  };

  SUBCASE("full mixture density at N = 1 with the trivial orthonormal basis") {
    const auto clusters = random_clusters(rng, 2, 1, grid);
    const Eigen::VectorXd pi = random_simplex(rng, 2);
    const Eigen::MatrixXd h = Eigen::MatrixXd::Ones(1, 1);
    const double mass = integrate([&](double x) {
      Eigen::VectorXd v(1);
      v << x;
      return std::exp(dpm_logdensity(v, clusters, pi, h));
    });
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("site marginal of a multi-site model") {
    const Eigen::MatrixXd h = oracles::random_orthonormal(rng, 6, 2);
    const auto clusters = random_clusters(rng, 2, 2, grid);
    const Eigen::VectorXd pi = random_simplex(rng, 2);
    const double mass = integrate([&](double x) {
      double pdf = 0.0;
      for (std::size_t k = 0; k < clusters.size(); ++k) {
        const double scale = marginal_scale(3, clusters[k], h);
        pdf += pi[static_cast<Eigen::Index>(k)] *
               student_t_pdf(x / scale, clusters[k].df) / scale;
      }
      return pdf;
    });
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("a non-orthonormal basis is rejected") {
    const auto clusters = random_clusters(rng, 1, 2, grid);
    Eigen::MatrixXd bad(1, 2);
    bad << 0.5, 0.5;
    Eigen::VectorXd v(1);
    v << 0.3;
    CHECK_THROWS_AS(lowrank_t_logdensity(v, clusters[0], bad), ArgumentError);
  }
}

TEST_CASE("marginal mixture cdf and quantile") {
  Rng rng(81);
  const int l = 3;
  const Eigen::MatrixXd h = oracles::random_orthonormal(rng, 5, l);
  const DfGrid grid = DfGrid::paper_default();
  const auto clusters = random_clusters(rng, 3, l, grid);
  const Eigen::VectorXd pi = random_simplex(rng, 3);

  SUBCASE("median of a symmetric mixture is zero") {
    CHECK(std::fabs(marginal_mixture_quantile(2, 0.5, clusters, pi, h)) < 1e-10);
  }

  SUBCASE("cdf(quantile(p)) = p round trip") {
    for (const double p : {0.01, 0.5, 0.99}) {
      const double q = marginal_mixture_quantile(1, p, clusters, pi, h);
      CHECK(marginal_mixture_cdf(1, q, clusters, pi, h) == doctest::Approx(p).epsilon(1e-8));
    }
  }

  SUBCASE("single component with unit scale matches the scalar t oracle") {
    // Choose the dispersion so the site-marginal scale is exactly one.
    std::vector<ClusterParams> one(1);
    one[0].df = 3.0;
    one[0].nugget2 = 0.25;
    const Eigen::VectorXd row = h.row(2).transpose();
    // row' (c I) row + 0.25 = target: scale^2 = ((a-2)/a)(disp + nugget2) = 1
    const double target_disp = 3.0 / (3.0 - 2.0) - 0.25;
    one[0].dispersion =
        (target_disp / row.squaredNorm()) * Eigen::MatrixXd::Identity(l, l);
    const Eigen::VectorXd unit = Eigen::VectorXd::Ones(1);
    boost::math::students_t dist(3.0);
    for (const double x : {-2.5, -0.3, 0.0, 1.7, 4.0})
      CHECK(marginal_mixture_cdf(2, x, one, unit, h) ==
            doctest::Approx(boost::math::cdf(dist, x)).epsilon(1e-10));
    CHECK(marginal_mixture_quantile(2, 0.975, one, unit, h) ==
          doctest::Approx(boost::math::quantile(dist, 0.975)).epsilon(1e-7));
  }

  SUBCASE("quantile rejects levels outside (0,1)") {
    CHECK_THROWS_AS(marginal_mixture_quantile(0, 0.0, clusters, pi, h), ArgumentError);
    CHECK_THROWS_AS(marginal_mixture_quantile(0, 1.0, clusters, pi, h), ArgumentError);
  }
}

TEST_CASE("tail dependence coefficient") {
  Rng rng(82);
  const int l = 3;

  SUBCASE("duplicate site rows with a vanishing nugget give chi = 1") {
    Eigen::MatrixXd h(2, l);
    h.row(0) = oracles::random_orthonormal(rng, 4, l).row(0);
    h.row(1) = h.row(0);
    std::vector<ClusterParams> clusters(1);
    clusters[0].dispersion = oracles::random_spd(rng, l, 0.3);
    clusters[0].nugget2 = 0.0;  // clamped internally
    clusters[0].df = 4.0;
    const Eigen::VectorXd pi = Eigen::VectorXd::Ones(1);
    CHECK(chi_coefficient(0, 1, clusters, pi, h) == doctest::Approx(1.0).epsilon(1e-5));
  }

  SUBCASE("independent sites at df 3 hit the closed form 2(1 - F_T(2; 4))") {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, 2);
    h(0, 0) = 1.0;
    h(1, 1) = 1.0;  // orthogonal rows: r = 0
    std::vector<ClusterParams> clusters(1);
    clusters[0].dispersion = Eigen::MatrixXd::Identity(2, 2);
    clusters[0].nugget2 = 1e-12;
    clusters[0].df = 3.0;
    const Eigen::VectorXd pi = Eigen::VectorXd::Ones(1);
    boost::math::students_t dist(4.0);
    const double expected = 2.0 * (1.0 - boost::math::cdf(dist, 2.0));
    CHECK(chi_coefficient(0, 1, clusters, pi, h) == doctest::Approx(expected).epsilon(1e-10));
  }

  SUBCASE("the heaviest-tailed component owns the tail") {
    const Eigen::MatrixXd h = oracles::random_orthonormal(rng, 4, l);
    auto clusters = random_clusters(rng, 3, l, DfGrid::paper_default());
    clusters[1].df = 2.5;  // strictly the heaviest
    clusters[0].df = 10.0;
    clusters[2].df = 30.0;
    Eigen::VectorXd pi(3);
    pi << 0.98, 0.01, 0.01;
    std::vector<ClusterParams> heavy_only(1, clusters[1]);
    const Eigen::VectorXd unit = Eigen::VectorXd::Ones(1);
    CHECK(chi_coefficient(0, 2, clusters, pi, h) ==
          chi_coefficient(0, 2, heavy_only, unit, h));
  }

  SUBCASE("monotone in correlation, decreasing in df, always positive") {
    // chi as a function of (r, a) through a 2-site standalone construction.
    const auto chi_of = [](double r, double a) {
      Eigen::MatrixXd h(2, 2);
      const double angle = std::acos(r);
      h << 1.0, 0.0, std::cos(angle), std::sin(angle);
      std::vector<ClusterParams> clusters(1);
      clusters[0].dispersion = Eigen::MatrixXd::Identity(2, 2);
      clusters[0].nugget2 = 1e-12;
      clusters[0].df = a;
      return chi_coefficient(0, 1, clusters, Eigen::VectorXd::Ones(1), h);
    };
    for (const double a : {2.1, 3.0, 8.0}) {
      double last = 0.0;
      for (const double r : {-0.5, 0.0, 0.4, 0.8, 0.95}) {
        const double value = chi_of(r, a);
        CHECK(value > last);  // increasing in r, strictly positive
        last = value;
      }
    }
    for (const double r : {0.2, 0.6}) {
      double last = 1.1;
      for (const double a : {2.1, 4.0, 10.0, 25.0}) {
        const double value = chi_of(r, a);
        CHECK(value < last);  // decreasing in df at fixed positive r
        last = value;
      }
    }
  }

  SUBCASE("same site is rejected") {
    const Eigen::MatrixXd h = oracles::random_orthonormal(rng, 4, l);
    const auto clusters = random_clusters(rng, 1, l, DfGrid::paper_default());
    CHECK_THROWS_AS(chi_coefficient(1, 1, clusters, Eigen::VectorXd::Ones(1), h), ArgumentError);
  }
}

TEST_CASE("chi matches the empirical conditional exceedance on a small run") {
  // Scaled-down version of the simulation check (the full 1e7-pair version
  // runs in the acceptance suite).
  Rng rng(83);
  const int l = 2;
  Eigen::MatrixXd h(2, l);
  h << 0.9, 0.1, 0.6, 0.55;
  std::vector<ClusterParams> clusters(2);
  clusters[0].dispersion = oracles::random_spd(rng, l, 0.3);
  clusters[0].nugget2 = 0.05;
  clusters[0].df = 3.0;
  clusters[1].dispersion = oracles::random_spd(rng, l, 0.3);
  clusters[1].nugget2 = 0.05;
  clusters[1].df = 25.0;
  Eigen::VectorXd pi(2);
  pi << 0.4, 0.6;

  const double u = 0.9999;
  const double q0 = marginal_mixture_quantile(0, u, clusters, pi, h);
  const double q1 = marginal_mixture_quantile(1, u, clusters, pi, h);
  const long n_sim = 2000000;
  long both = 0, cond = 0;
  for (long s = 0; s < n_sim; ++s) {
    int label = 0;
    double scale2 = 0.0;
    const Eigen::VectorXd eps = draw_residual_field(clusters, pi, h, rng, &label, &scale2);
    if (eps[1] > q1) {
      ++cond;
      if (eps[0] > q0) ++both;
    }
  }
  REQUIRE(cond > 50);
  const double empirical = static_cast<double>(both) / static_cast<double>(cond);
  const double se = std::sqrt(empirical * (1.0 - empirical) / static_cast<double>(cond));
  const double analytic = chi_coefficient(0, 1, clusters, pi, h);
  CHECK(std::fabs(analytic - empirical) < 3.0 * std::max(se, 1e-3));
}

TEST_CASE("model covariance") {
  Rng rng(84);
  const int l = 3;
  const Eigen::MatrixXd h = oracles::random_orthonormal(rng, 5, l);

  SUBCASE("diagonal single-cluster case") {
    const auto clusters = random_clusters(rng, 1, l, DfGrid::paper_default());
    const Eigen::VectorXd pi = Eigen::VectorXd::Ones(1);
    const Eigen::VectorXd row = h.row(2).transpose();
    const double expected = row.dot(clusters[0].dispersion * row) + clusters[0].nugget2;
    CHECK(model_covariance(2, 2, clusters, pi, h) == doctest::Approx(expected).epsilon(1e-14));
  }

  SUBCASE("prior-mean plug-in reproduces the low-rank approximation") {
    Eigen::VectorXd delta(l);
    delta << 2.0, 1.0, 0.4;
    std::vector<ClusterParams> clusters(3);
    Eigen::VectorXd pi = random_simplex(rng, 3);
    double nugget_bar = 0.0;
    for (int c = 0; c < 3; ++c) {
      clusters[static_cast<std::size_t>(c)].dispersion = delta.asDiagonal();
      clusters[static_cast<std::size_t>(c)].nugget2 = 0.1 * (c + 1);
      clusters[static_cast<std::size_t>(c)].df = 5.0;
      nugget_bar += pi[c] * clusters[static_cast<std::size_t>(c)].nugget2;
    }
    const Eigen::VectorXd r1 = h.row(0).transpose();
    const Eigen::VectorXd r2 = h.row(3).transpose();
    CHECK(model_covariance(0, 3, clusters, pi, h) ==
          doctest::Approx(r1.dot(delta.asDiagonal() * r2)).epsilon(1e-12));
    CHECK(model_covariance(0, 0, clusters, pi, h) ==
          doctest::Approx(r1.dot(delta.asDiagonal() * r1) + nugget_bar).epsilon(1e-12));
  }

  SUBCASE("matches Monte Carlo covariance of generator draws") {
    const auto clusters = random_clusters(rng, 2, l, DfGrid{40, 400, 1});  // df >= 4: finite kurtosis
    const Eigen::VectorXd pi = random_simplex(rng, 2);
    const long n_sim = 1000000;
    Eigen::VectorXd a(n_sim), b(n_sim);
    for (long s = 0; s < n_sim; ++s) {
      const Eigen::VectorXd eps = draw_residual_field(clusters, pi, h, rng);
      a[s] = eps[1];
      b[s] = eps[4];
    }
    const double mean_a = a.mean(), mean_b = b.mean();
    const Eigen::ArrayXd ca = a.array() - mean_a, cb = b.array() - mean_b;
    const double cov_hat = (ca * cb).sum() / static_cast<double>(n_sim - 1);
    // MC standard error of a covariance via the delta method.
    const double var_prod = ((ca * cb - cov_hat).square()).sum() / static_cast<double>(n_sim - 1);
    const double se = std::sqrt(var_prod / static_cast<double>(n_sim));
    const double expected = model_covariance(1, 4, clusters, pi, h);
    CHECK(std::fabs(cov_hat - expected) < 3.0 * se);
  }
}

TEST_CASE("synthetic generator") {
  const auto toy = oracles::toy_basis(85, 3, 2, 3, 8, 4, 4, 2);
  Rng rng(85);

  SUBCASE("noise-free limit returns the mean surface exactly") {
    std::vector<ClusterParams> clusters(1);
    clusters[0].dispersion = Eigen::MatrixXd::Zero(2, 2);
    clusters[0].nugget2 = 0.0;
    clusters[0].df = 10.0;
    MeanCoefficients coeffs = MeanCoefficients::zeros(toy.basis.p());
    coeffs.beta[0][0].setConstant(1.5);
    coeffs.beta[1][1].setConstant(-0.7);
    const auto [data, latent] =
        generate_synthetic(coeffs, clusters, Eigen::VectorXd::Ones(1), toy.basis, 24, 9);
    for (int t = 1; t <= 24; ++t) {
      const Eigen::VectorXd mu = mean_surface(coeffs, toy.basis, toy.covariate, t);
      CHECK((data.values.col(t - 1) - mu).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(latent.effects.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("scale draws have unit mean for any df") {
    // E[sigma^2] = (a/2 - 1) / (a/2 - 1) = 1. The sample mean obeys a CLT only
    // when the draw variance is finite (a > 4); below that, check the
    // distribution through quantile frequencies instead.
    for (const double df : {6.0, 12.0, 40.0}) {
      const long n_sim = 1000000;
      double sum = 0.0, sumsq = 0.0;
      for (long s = 0; s < n_sim; ++s) {
        const double draw = rng.inverse_gamma(0.5 * df, 0.5 * df - 1.0);
        sum += draw;
        sumsq += draw * draw;
      }
      const double mean = sum / n_sim;
      const double var = sumsq / n_sim - mean * mean;
      const double se = std::sqrt(var / n_sim);
      CHECK(std::fabs(mean - 1.0) < 3.0 * se);
    }
    for (const double df : {2.1, 3.0}) {
      // P(sigma^2 <= m) = P(Gamma(a/2, rate a/2-1) >= 1/m), checked at the
      // analytic quartiles of the reciprocal gamma.
      const double shape = 0.5 * df, rate = 0.5 * df - 1.0;
      boost::math::gamma_distribution<double> gamma_dist(shape, 1.0 / rate);
      const long n_sim = 400000;
      for (const double p : {0.25, 0.5, 0.75}) {
        const double cut = 1.0 / boost::math::quantile(gamma_dist, 1.0 - p);
        long below = 0;
        for (long s = 0; s < n_sim; ++s)
          if (rng.inverse_gamma(shape, rate) <= cut) ++below;
        const double freq = static_cast<double>(below) / n_sim;
        const double se = std::sqrt(p * (1.0 - p) / n_sim);
        CHECK(std::fabs(freq - p) < 4.0 * se);
      }
    }
  }

  SUBCASE("site variances match the model covariance") {
    std::vector<ClusterParams> clusters(2);
    clusters[0].dispersion = Eigen::MatrixXd(toy.basis.spatial.eigenvalues.asDiagonal());
    clusters[0].nugget2 = 0.1;
    clusters[0].df = 8.0;  // finite fourth moment
    clusters[1].dispersion = 0.5 * clusters[0].dispersion;
    clusters[1].nugget2 = 0.3;
    clusters[1].df = 12.0;
    Eigen::VectorXd pi(2);
    pi << 0.6, 0.4;
    const long reps = 100000;
    const Eigen::MatrixXd& h = toy.basis.spatial.eofs;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(h.rows());
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(h.rows());
    Eigen::VectorXd sum4 = Eigen::VectorXd::Zero(h.rows());
    for (long r = 0; r < reps; ++r) {
      const Eigen::VectorXd eps = draw_residual_field(clusters, pi, h, rng);
      sum += eps;
      sumsq += eps.cwiseAbs2();
      sum4 += eps.cwiseAbs2().cwiseAbs2();
    }
    for (int site = 0; site < h.rows(); ++site) {
      const double mean = sum[site] / reps;
      const double var = sumsq[site] / reps - mean * mean;
      const double m4 = sum4[site] / reps;
      const double se = std::sqrt(std::max(m4 - var * var, 0.0) / reps);
      const double expected = model_covariance(site, site, clusters, pi, h);
      CHECK(std::fabs(var - expected) < 3.0 * se);
    }
  }

  SUBCASE("generator is deterministic given the seed and validates length") {
    std::vector<ClusterParams> clusters(1);
    clusters[0].dispersion = Eigen::MatrixXd::Identity(2, 2);
    clusters[0].nugget2 = 0.1;
    clusters[0].df = 6.0;
    const MeanCoefficients coeffs = MeanCoefficients::zeros(toy.basis.p());
    const auto [a, la] =
        generate_synthetic(coeffs, clusters, Eigen::VectorXd::Ones(1), toy.basis, 16, 123);
    const auto [b, lb] =
        generate_synthetic(coeffs, clusters, Eigen::VectorXd::Ones(1), toy.basis, 16, 123);
    CHECK(a.values == b.values);
    CHECK(la.scale2 == lb.scale2);
    CHECK_THROWS_AS(
        generate_synthetic(coeffs, clusters, Eigen::VectorXd::Ones(1), toy.basis, 15, 1),
        ArgumentError);
  }
}

TEST_CASE("df grid membership is exact") {
  const DfGrid grid = DfGrid::paper_default();
  CHECK(grid.size() == 380);
  CHECK(grid.value(0) == doctest::Approx(2.1).epsilon(1e-15));
  CHECK(grid.value(379) == doctest::Approx(40.0).epsilon(1e-15));
  CHECK(grid.contains(2.1));
  CHECK(grid.contains(39.9));
  CHECK_FALSE(grid.contains(2.05));
  CHECK_FALSE(grid.contains(40.1));
  const DfGrid single = DfGrid::single(40.0);
  CHECK(single.size() == 1);
  CHECK(single.value(0) == 40.0);
}

TEST_CASE("parameter bundles round-trip") {
  Rng rng(86);
  ModelParameters params;
  params.coeffs = MeanCoefficients::zeros(12);
  params.coeffs.beta[0][1] = rng.normal_vector(12);
  params.coeffs.mu_hyper[1][0] = 0.25;
  params.coeffs.sigma2_hyper[0][0] = 2.5;
  params.clusters = random_clusters(rng, 2, 3, DfGrid::paper_default());
  params.weights.pi = random_simplex(rng, 2);
  params.weights.sticks = sticks_from_weights(params.weights.pi);
  params.weights.concentration = 0.7;
  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "stmix_params.stmx";
  save_parameters(params, path);
  const ModelParameters back = load_parameters(path);
  CHECK(back.coeffs.beta[0][1] == params.coeffs.beta[0][1]);
  CHECK(back.clusters[1].dispersion == params.clusters[1].dispersion);
  CHECK(back.clusters[0].df == params.clusters[0].df);
  CHECK(back.weights.pi == params.weights.pi);
  std::filesystem::remove(path);
}
