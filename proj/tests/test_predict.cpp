#include <doctest.h>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>

#include "oracles.hpp"
#include "stmix/error.hpp"
#include "stmix/predict.hpp"

using namespace stmix;

namespace {

// PosteriorSamples with every draw pinned at one parameter value: the
// predictive machinery then samples the exact model law.
PosteriorSamples degenerate_samples(const std::vector<ClusterParams>& clusters,
                                    const Eigen::VectorXd& pi, const MeanCoefficients& coeffs,
                                    int b) {
  PosteriorSamples samples;
  samples.config.n_components = static_cast<int>(clusters.size());
  Draw draw;
  draw.coeffs = coeffs;
  draw.clusters = clusters;
  draw.weights.pi = pi;
  draw.weights.sticks = sticks_from_weights(pi);
  draw.weights.concentration = 1.0;
  draw.counts = Eigen::VectorXi::Zero(static_cast<int>(clusters.size()));
  samples.draws.assign(static_cast<std::size_t>(b), draw);
  return samples;
}

struct PredictFixture {
  oracles::ToyBasis toy = oracles::toy_basis(601, 4, 3, 3, 8, 4, 4, 2);
  std::vector<ClusterParams> clusters;
  Eigen::VectorXd pi;
  MeanCoefficients coeffs;

  PredictFixture() {
    clusters.resize(2);
    clusters[0].dispersion = Eigen::MatrixXd(toy.basis.spatial.eigenvalues.asDiagonal());
    clusters[0].nugget2 = 0.1;
    clusters[0].df = 20.0;
    clusters[1].dispersion = 0.4 * clusters[0].dispersion;
    clusters[1].nugget2 = 0.25;
    clusters[1].df = 5.0;
    pi.resize(2);
    pi << 0.6, 0.4;
    coeffs = MeanCoefficients::zeros(toy.basis.p());
    Rng rng(602);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) coeffs.beta[i][j] = 2.0 * rng.normal_vector(toy.basis.p());
  }
};

}  // namespace

TEST_CASE("noise-free posterior predictive returns the mean surface") {
  PredictFixture fx;
  std::vector<ClusterParams> tight(1);
  tight[0].dispersion = 1e-14 * Eigen::MatrixXd::Identity(2, 2);
  tight[0].nugget2 = 1e-12;
  tight[0].df = 40.0;
  const PosteriorSamples samples =
      degenerate_samples(tight, Eigen::VectorXd::Ones(1), fx.coeffs, 64);
  const PredictiveEnsemble ensemble =
      posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 13, 7);
  const Eigen::VectorXd mu = mean_surface(fx.coeffs, fx.toy.basis, fx.toy.covariate, 13);
  for (Eigen::Index d = 0; d < 64; ++d)
    CHECK((ensemble.fields.row(d).transpose() - mu).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("ensemble mean and variance obey the model law") {
  PredictFixture fx;
  const int b = 100000;
  const PosteriorSamples samples =
      degenerate_samples(fx.clusters, fx.pi, fx.coeffs, b);
  const PredictiveEnsemble ensemble =
      posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 10, 99);
  const Eigen::VectorXd mu = mean_surface(fx.coeffs, fx.toy.basis, fx.toy.covariate, 10);
  for (Eigen::Index site = 0; site < fx.toy.basis.n_sites(); ++site) {
    const double se = ensemble.sd[site] / std::sqrt(static_cast<double>(b));
    CHECK(std::fabs(ensemble.mean[site] - mu[site]) < 3.0 * se);
    // Variance against the analytic model covariance; the variance of a
    // sample variance needs the fourth moment, so bound it empirically.
    const double expected =
        model_covariance(static_cast<int>(site), static_cast<int>(site), fx.clusters, fx.pi,
                         fx.toy.basis.spatial.eofs);
    const Eigen::ArrayXd centered =
        ensemble.fields.col(site).array() - ensemble.mean[site];
    const double var = centered.square().sum() / (b - 1);
    const double se_var =
        std::sqrt((centered.square() - var).square().sum() / (b - 1.0)) / std::sqrt(double(b));
    CHECK(std::fabs(var - expected) < 3.0 * se_var);
  }
}

TEST_CASE("predictive ensembles are reproducible and thread-count invariant") {
  PredictFixture fx;
  const PosteriorSamples samples = degenerate_samples(fx.clusters, fx.pi, fx.coeffs, 500);
  const PredictiveEnsemble a =
      posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 5, 31, 1);
  const PredictiveEnsemble b =
      posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 5, 31, 4);
  CHECK(a.fields == b.fields);
  const PredictiveEnsemble c =
      posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 5, 32);
  CHECK(a.fields != c.fields);
}

TEST_CASE("posterior predictive rejects uncovered target years") {
  PredictFixture fx;
  const PosteriorSamples samples = degenerate_samples(fx.clusters, fx.pi, fx.coeffs, 8);
  // Covariate covers 3 + 6 years of 8 weeks = 72 weeks.
  CHECK_NOTHROW(posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 72, 1));
  CHECK_THROWS_AS(posterior_predictive(samples, fx.toy.basis, fx.toy.covariate, 73, 1),
                  CoverageError);
}

TEST_CASE("decadal rate of change") {
  PredictFixture fx;

  SUBCASE("zero slope block gives an identically zero rate") {
    MeanCoefficients intercept_only = fx.coeffs;
    intercept_only.beta[1][0].setZero();
    intercept_only.beta[1][1].setZero();
    const PosteriorSamples samples =
        degenerate_samples(fx.clusters, fx.pi, intercept_only, 16);
    const DrcResult drc = decadal_rate_of_change(samples, fx.toy.basis, fx.toy.covariate, 3);
    CHECK(drc.mean.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("a mean linear in the year with increment c has rate 10c") {
    // Covariate equal to the year index makes the standardized column linear
    // in t1; slope coefficients constant over the spatial tensor then give a
    // uniform per-year increment c at every site and week.
    oracles::ToyBasis linear = fx.toy;
    const int years = static_cast<int>(linear.basis.n_years());
    for (Eigen::Index i = 0; i < linear.covariate.values.size(); ++i)
      linear.covariate.values[i] = static_cast<double>(i + 1);
    linear.basis.x0 = standardize_covariate(linear.covariate, years);
    linear.basis.cov_scale = covariate_scale(linear.covariate, years);

    const double c = 0.37;  // target per-year increment
    const double scale = linear.basis.cov_scale.scale;
    MeanCoefficients coeffs = MeanCoefficients::zeros(linear.basis.p());
    coeffs.beta[1][0].setConstant(c * scale);
    coeffs.beta[1][1].setConstant(c * scale);
    const PosteriorSamples samples =
        degenerate_samples(fx.clusters, fx.pi, coeffs, 4);
    const DrcResult drc = decadal_rate_of_change(samples, linear.basis, linear.covariate, 2);
    for (Eigen::Index site = 0; site < linear.basis.n_sites(); ++site)
      CHECK(drc.mean[site] == doctest::Approx(10.0 * c).epsilon(1e-9));
  }

  SUBCASE("the overall rate is the average of weekly rates") {
    const PosteriorSamples samples =
        degenerate_samples(fx.clusters, fx.pi, fx.coeffs, 8);
    Eigen::VectorXd weekly_avg = Eigen::VectorXd::Zero(fx.toy.basis.n_sites());
    for (int week = 1; week <= fx.toy.basis.weeks_per_year(); ++week)
      weekly_avg += decadal_rate_of_change(samples, fx.toy.basis, fx.toy.covariate, week).mean;
    weekly_avg /= static_cast<double>(fx.toy.basis.weeks_per_year());
    // Averaging DRC fields over weeks is the same linear functional as the
    // week-averaged mean difference.
    Eigen::VectorXd direct = Eigen::VectorXd::Zero(fx.toy.basis.n_sites());
    const int t1 = static_cast<int>(fx.toy.basis.n_years());
    for (int week = 1; week <= fx.toy.basis.weeks_per_year(); ++week) {
      const Eigen::VectorXd mu_last = mean_surface_at(
          fx.coeffs, fx.toy.basis, fx.toy.basis.cov_scale.row(fx.toy.covariate, t1), week);
      const Eigen::VectorXd mu_first = mean_surface_at(
          fx.coeffs, fx.toy.basis, fx.toy.basis.cov_scale.row(fx.toy.covariate, 1), week);
      direct += 10.0 * (mu_last - mu_first) / (t1 - 1.0);
    }
    direct /= static_cast<double>(fx.toy.basis.weeks_per_year());
    CHECK((weekly_avg - direct).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("return levels") {
  PredictFixture fx;

  SUBCASE("stationary case is reference-year free and matches the t quantile oracle") {
    MeanCoefficients flat = fx.coeffs;
    flat.beta[1][0].setZero();
    flat.beta[1][1].setZero();
    std::vector<ClusterParams> one(1, fx.clusters[1]);
    const PosteriorSamples samples =
        degenerate_samples(one, Eigen::VectorXd::Ones(1), flat, 4);
    const int t0_years = 4;
    const double level = 1.0 - 1.0 / (8.0 * t0_years);
    const ReturnLevelResult early =
        return_level(samples, fx.toy.basis, fx.toy.covariate, 2, t0_years, 2000);
    const ReturnLevelResult late =
        return_level(samples, fx.toy.basis, fx.toy.covariate, 2, t0_years, 2004);
    CHECK((early.level - late.level).cwiseAbs().maxCoeff() < 1e-12);

    boost::math::students_t dist(one[0].df);
    for (Eigen::Index site = 0; site < fx.toy.basis.n_sites(); ++site) {
      const double scale = marginal_scale(static_cast<int>(site), one[0],
                                          fx.toy.basis.spatial.eofs);
      const Eigen::VectorXd mu = mean_surface_at(
          flat, fx.toy.basis, fx.toy.basis.cov_scale.row(fx.toy.covariate, 1), 2);
      const double expected = mu[site] + scale * boost::math::quantile(dist, level);
      CHECK(early.level[site] == doctest::Approx(expected).epsilon(1e-6));
    }
  }

  SUBCASE("longer return periods raise the level strictly") {
    const PosteriorSamples samples =
        degenerate_samples(fx.clusters, fx.pi, fx.coeffs, 4);
    const ReturnLevelResult t2 =
        return_level(samples, fx.toy.basis, fx.toy.covariate, 3, 2, 2001);
    const ReturnLevelResult t4 =
        return_level(samples, fx.toy.basis, fx.toy.covariate, 3, 4, 2001);
    for (Eigen::Index site = 0; site < fx.toy.basis.n_sites(); ++site)
      CHECK(t4.level[site] > t2.level[site]);
  }

  SUBCASE("insufficient covariate horizon is a coverage error") {
    const PosteriorSamples samples =
        degenerate_samples(fx.clusters, fx.pi, fx.coeffs, 4);
    CHECK_THROWS_AS(return_level(samples, fx.toy.basis, fx.toy.covariate, 3, 40, 2001),
                    CoverageError);
  }
}

TEST_CASE("joint exceedance probabilities") {
  PredictFixture fx;
  const int b = 4000;
  const PosteriorSamples samples = degenerate_samples(fx.clusters, fx.pi, fx.coeffs, b);

  SUBCASE("singleton sets collapse union and intersection") {
    const std::vector<int> d0{3};
    const auto u = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                         ExceedanceThreshold::fixed_value(1.0),
                                         ExceedanceMode::kUnion, 7, 5);
    const auto i = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                         ExceedanceThreshold::fixed_value(1.0),
                                         ExceedanceMode::kIntersection, 7, 5);
    CHECK(u.probability == i.probability);
  }

  SUBCASE("extreme thresholds hit the event limits") {
    const std::vector<int> d0{0, 1, 5};
    for (const auto mode : {ExceedanceMode::kUnion, ExceedanceMode::kIntersection}) {
      CHECK(joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                  ExceedanceThreshold::fixed_value(-1e9), mode, 7, 5)
                .probability == 1.0);
      CHECK(joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                  ExceedanceThreshold::fixed_value(1e9), mode, 7, 5)
                .probability == 0.0);
    }
  }

  SUBCASE("union dominates intersection and both fall in the threshold") {
    Rng rng(603);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<int> d0;
      for (int site = 0; site < fx.toy.basis.n_sites(); ++site)
        if (rng.uniform() < 0.4) d0.push_back(site);
      if (d0.empty()) d0.push_back(1);
      const double u = -1.0 + 4.0 * rng.uniform();
      const auto uni = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                             ExceedanceThreshold::fixed_value(u),
                                             ExceedanceMode::kUnion, 7, 5);
      const auto inter = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                               ExceedanceThreshold::fixed_value(u),
                                               ExceedanceMode::kIntersection, 7, 5);
      CHECK(uni.probability >= inter.probability);
      const auto uni_higher = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                                    ExceedanceThreshold::fixed_value(u + 0.5),
                                                    ExceedanceMode::kUnion, 7, 5);
      CHECK(uni_higher.probability <= uni.probability);
    }
  }

  SUBCASE("quantile-mode probabilities are time invariant") {
    const std::vector<int> d0{0, 2, 7};
    const auto early = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                             ExceedanceThreshold::site_quantile(0.9),
                                             ExceedanceMode::kUnion, 3, 5);
    const auto late = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                            ExceedanceThreshold::site_quantile(0.9),
                                            ExceedanceMode::kUnion, 60, 6);
    const double se = std::sqrt(early.mc_se * early.mc_se + late.mc_se * late.mc_se);
    CHECK(std::fabs(early.probability - late.probability) < 3.0 * se);
    // and non-increasing in the quantile level
    const auto tighter = joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, d0,
                                               ExceedanceThreshold::site_quantile(0.97),
                                               ExceedanceMode::kUnion, 3, 5);
    CHECK(tighter.probability <= early.probability);
  }

  SUBCASE("empty site sets are rejected") {
    CHECK_THROWS_AS(joint_exceedance_prob(samples, fx.toy.basis, fx.toy.covariate, {},
                                          ExceedanceThreshold::fixed_value(1.0),
                                          ExceedanceMode::kUnion, 7, 5),
                    ArgumentError);
  }
}

TEST_CASE("bivariate exceedance matches a nested quadrature oracle") {
  // Single cluster, two sites: P(eps1 > u, eps2 > u) by integrating the
  // normal orthant probability over the inverse-gamma mixing law.
  oracles::ToyBasis toy = oracles::toy_basis(604, 2, 2, 3, 8, 4, 4, 2);
  std::vector<ClusterParams> one(1);
  Rng rng(605);
  one[0].dispersion = oracles::random_spd(rng, 2, 0.2);
  one[0].nugget2 = 0.15;
  one[0].df = 5.0;
  const Eigen::VectorXd pi = Eigen::VectorXd::Ones(1);
  const MeanCoefficients zero = MeanCoefficients::zeros(toy.basis.p());

  const int b = 100000;
  const PosteriorSamples samples = degenerate_samples(one, pi, zero, b);
  const std::vector<int> d0{0, 1};
  const double u = 1.1;
  const auto mc = joint_exceedance_prob(samples, toy.basis, toy.covariate, d0,
                                        ExceedanceThreshold::fixed_value(u),
                                        ExceedanceMode::kIntersection, 5, 9);

  // Oracle: E_V [ P(N2(0, V Sigma0) in (u,inf)^2) ], V ~ IG(a/2, a/2-1).
  const Eigen::MatrixXd& h = toy.basis.spatial.eofs;
  Eigen::MatrixXd sigma0(2, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      sigma0(r, c) = h.row(r) * one[0].dispersion * h.row(c).transpose();
      if (r == c) sigma0(r, c) += one[0].nugget2;
    }
  const double s1 = std::sqrt(sigma0(0, 0)), s2 = std::sqrt(sigma0(1, 1));
  const double rho = sigma0(0, 1) / (s1 * s2);
  const auto normal_cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const auto orthant = [&](double v) {
    // P(X > u, Y > u) for N(0, v Sigma0) via 1-D integration over X.
    const double sv1 = s1 * std::sqrt(v), sv2 = s2 * std::sqrt(v);
    const double cond_sd = sv2 * std::sqrt(1.0 - rho * rho);
    const auto integrand = [&](double x) {
      const double cond_mean = rho * sv2 / sv1 * x;
      const double tail = 1.0 - normal_cdf((u - cond_mean) / cond_sd);
      const double pdf = std::exp(-0.5 * x * x / (sv1 * sv1)) / (sv1 * std::sqrt(2.0 * M_PI));
      return pdf * tail;
    };
    double total = 0.0;
    const double hi = u + 12.0 * sv1;
    const double edges[] = {u, u + sv1, u + 3 * sv1, hi};
    for (int i = 0; i + 1 < 4; ++i)
      total += oracles::adaptive_simpson(integrand, edges[i], edges[i + 1], 1e-10);
    return total;
  };
  const double shape = 0.5 * one[0].df, rate = 0.5 * one[0].df - 1.0;
  boost::math::gamma_distribution<double> mixing(shape, 1.0 / rate);  // for 1/V
  const auto outer = [&](double x) {
    return boost::math::pdf(mixing, x) * orthant(1.0 / x);
  };
  const double x_lo = boost::math::quantile(mixing, 1e-10);
  const double x_hi = boost::math::quantile(mixing, 1.0 - 1e-10);
  const double mid = boost::math::quantile(mixing, 0.5);
  double expected = 0.0;
  expected += oracles::adaptive_simpson(outer, x_lo, mid, 1e-9);
  expected += oracles::adaptive_simpson(outer, mid, x_hi, 1e-9);

  CHECK(std::fabs(mc.probability - expected) < 3.0 * std::max(mc.mc_se, 1e-4));
}

TEST_CASE("site-value writers emit the declared schemas") {
  const std::filesystem::path csv = std::filesystem::temp_directory_path() / "stmix_vals.csv";
  const std::filesystem::path geo = std::filesystem::temp_directory_path() / "stmix_vals.geojson";
  Eigen::VectorXd values(2), se(2);
  values << 1.5, -2.25;
  se << 0.1, 0.2;
  Eigen::MatrixXd coords(2, 2);
  coords << 30.0, 10.0, 31.0, 11.0;
  write_site_values_csv(csv, values, se);
  write_site_values_geojson(geo, coords, values);
  std::ifstream is(csv);
  std::string header, row1;
  std::getline(is, header);
  std::getline(is, row1);
  CHECK(header == "site_id,value,mc_se");
  CHECK(row1 == "1,1.5,0.10000000000000001");
  std::ifstream geo_is(geo);
  std::string all((std::istreambuf_iterator<char>(geo_is)), std::istreambuf_iterator<char>());
  CHECK(all.find("FeatureCollection") != std::string::npos);
  CHECK(all.find("\"site_id\": 2") != std::string::npos);
  std::filesystem::remove(csv);
  std::filesystem::remove(geo);
}
