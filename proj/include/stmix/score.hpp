#pragma once

#include <utility>

#include <Eigen/Dense>

#include "stmix/types.hpp"

namespace stmix {

// Empirical predictive distribution of one (site, time) cell: a right-
// continuous step CDF over the sorted draws.
struct PredictiveCdf {
  Eigen::VectorXd sorted;  // ascending

  static PredictiveCdf from_draws(const Eigen::Ref<const Eigen::VectorXd>& draws);
  double cdf(double x) const;
  double survival(double x) const { return 1.0 - cdf(x); }
};

// Brier score at level u: (1{y > u} - Fbar(u))^2.
double brier_score(double y, const PredictiveCdf& forecast, double u);

// Tail-weighted CRPS: the exact integral over (u, inf) of the squared gap
// between the step CDF and the observation indicator.
double twcrps(double y, const PredictiveCdf& forecast, double u);

// Percentage skill 100 * (benchmark - model) / benchmark of mean scores.
double skill_score(double mean_model, double mean_benchmark);

// Split at a year boundary: columns 1..cut train, cut+1..T test.
std::pair<GriddedDataset, GriddedDataset> chronological_split(const GriddedDataset& data,
                                                              int cut);

// Evaluation thresholds: empirical quantiles of the pooled training values
// from 95% to 99.9% in `steps` equal probability steps.
Eigen::VectorXd threshold_sweep(const Eigen::Ref<const Eigen::MatrixXd>& train_values,
                                int steps = 10);

}  // namespace stmix
