#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "stmix/sampler.hpp"

namespace stmix {

// Posterior predictive fields at one target week: one field per retained
// draw, with compensated-summation site means and SDs.
struct PredictiveEnsemble {
  Eigen::MatrixXd fields;  // B x N
  Eigen::VectorXd mean;    // per-site ensemble mean
  Eigen::VectorXd sd;      // per-site ensemble SD (divisor B-1)
  int t0 = 0;
  int year = 0;  // t01
  int week = 0;  // t02
};

// Simulate Y_{t0} for every retained draw: mean surface from the draw's
// coefficients and the (historic-standardized) covariate, then a fresh
// residual field from the draw's mixture. Deterministic given the seed,
// whatever the thread count.
PredictiveEnsemble posterior_predictive(const PosteriorSamples& samples, const BasisSet& basis,
                                        const CovariateSeries& covariate, int t0,
                                        std::uint64_t seed, int threads = 1);

struct DrcResult {
  Eigen::VectorXd mean;    // posterior mean decadal rate of change per site
  Eigen::VectorXd t_stat;  // posterior mean / posterior SD
};

// Decadal rate of change of the mean surface at one week of the year:
// 10 * (mu(T1, t2, s) - mu(1, t2, s)) / (T1 - 1) per draw.
DrcResult decadal_rate_of_change(const PosteriorSamples& samples, const BasisSet& basis,
                                 const CovariateSeries& covariate, int week);

struct ReturnLevelResult {
  Eigen::VectorXd level;  // posterior mean return level per site
  Eigen::VectorXd mc_se;  // posterior SD / sqrt(B)
};

// T0-year return level at one week, with the covariate averaged over the
// half-open calendar window [reference_year, reference_year + T0): per draw,
// the window-mean trend surface plus the 1 - 1/(T2*T0) residual quantile.
ReturnLevelResult return_level(const PosteriorSamples& samples, const BasisSet& basis,
                               const CovariateSeries& covariate, int week, int t0_years,
                               int reference_year);

double return_level_site(const PosteriorSamples& samples, const BasisSet& basis,
                         const CovariateSeries& covariate, int site, int week, int t0_years,
                         int reference_year);

enum class ExceedanceMode { kUnion, kIntersection };

struct ExceedanceThreshold {
  bool quantile_mode = false;
  double fixed = 0.0;  // temperature threshold u
  double level = 0.0;  // site-quantile level p

  static ExceedanceThreshold fixed_value(double u) { return {false, u, 0.0}; }
  static ExceedanceThreshold site_quantile(double p) { return {true, 0.0, p}; }
};

struct ExceedanceResult {
  double probability = 0.0;
  double mc_se = 0.0;  // binomial Monte Carlo standard error
};

// Monte Carlo frequency, over the predictive ensemble, of the union or
// intersection exceedance event on the site set D0. In quantile mode the
// per-site thresholds mu_t0 + Q_n(p) are recomputed from each draw's
// parameters, so parameter uncertainty propagates.
ExceedanceResult joint_exceedance_prob(const PosteriorSamples& samples, const BasisSet& basis,
                                       const CovariateSeries& covariate,
                                       const std::vector<int>& d0,
                                       const ExceedanceThreshold& threshold, ExceedanceMode mode,
                                       int t0, std::uint64_t seed);

// Output writers shared by the CLI.
void write_site_values_csv(const std::filesystem::path& path,
                           const Eigen::Ref<const Eigen::VectorXd>& values,
                           const Eigen::Ref<const Eigen::VectorXd>& mc_se);
void write_site_values_geojson(const std::filesystem::path& path,
                               const Eigen::Ref<const Eigen::MatrixXd>& coords,
                               const Eigen::Ref<const Eigen::VectorXd>& values);

// Mean and SD with Kahan-compensated accumulation (columns of a B x N matrix).
void compensated_mean_sd(const Eigen::Ref<const Eigen::MatrixXd>& fields, Eigen::VectorXd& mean,
                         Eigen::VectorXd& sd);

}  // namespace stmix
