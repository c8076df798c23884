#include "stmix/score.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "stmix/error.hpp"

namespace stmix {

PredictiveCdf PredictiveCdf::from_draws(const Eigen::Ref<const Eigen::VectorXd>& draws) {
  if (draws.size() < 1) throw ArgumentError("predictive CDF needs at least one draw");
  if (!draws.allFinite()) throw ArgumentError("predictive draws must be finite");
  PredictiveCdf out;
  out.sorted = draws;
  std::sort(out.sorted.data(), out.sorted.data() + out.sorted.size());
  return out;
}

double PredictiveCdf::cdf(double x) const {
  // Right-continuous: F(x) = #(draws <= x) / B.
  const double* begin = sorted.data();
  const double* end = begin + sorted.size();
  const double* it = std::upper_bound(begin, end, x);
  return static_cast<double>(it - begin) / static_cast<double>(sorted.size());
}

double brier_score(double y, const PredictiveCdf& forecast, double u) {
  const double gap = (y > u ? 1.0 : 0.0) - forecast.survival(u);
  return gap * gap;
}

double twcrps(double y, const PredictiveCdf& forecast, double u) {
  // Breakpoints above u: the draws, plus y itself. The integrand
  // (F(x) - 1{y <= x})^2 is constant between consecutive breakpoints and
  // vanishes beyond the last one.
  std::vector<double> points;
  points.reserve(static_cast<std::size_t>(forecast.sorted.size()) + 1);
  for (Eigen::Index i = 0; i < forecast.sorted.size(); ++i)
    if (forecast.sorted[i] > u) points.push_back(forecast.sorted[i]);
  if (y > u) points.push_back(y);
  if (points.empty()) return 0.0;
  std::sort(points.begin(), points.end());

  double total = 0.0;
  double left = u;
  for (double right : points) {
    if (right > left) {
      const double gap = forecast.cdf(left) - (y <= left ? 1.0 : 0.0);
      total += gap * gap * (right - left);
    }
    left = right;
  }
  return total;
}

double skill_score(double mean_model, double mean_benchmark) {
  if (mean_benchmark == 0.0)
    throw DegeneracyError("benchmark mean score is zero; skill is undefined");
  return 100.0 * (mean_benchmark - mean_model) / mean_benchmark;
}

std::pair<GriddedDataset, GriddedDataset> chronological_split(const GriddedDataset& data,
                                                              int cut) {
  data.validate();
  const int t = static_cast<int>(data.n_weeks());
  if (cut <= 1 || cut >= t) throw ArgumentError("cut must lie strictly inside the series");
  if (cut % data.weeks_per_year != 0)
    throw ArgumentError("cut " + std::to_string(cut) + " is not a year boundary (multiple of " +
                        std::to_string(data.weeks_per_year) + ")");
  GriddedDataset train, test;
  train.weeks_per_year = test.weeks_per_year = data.weeks_per_year;
  train.coords = test.coords = data.coords;
  train.n_years = cut / data.weeks_per_year;
  test.n_years = data.n_years - train.n_years;
  train.values = data.values.leftCols(cut);
  test.values = data.values.rightCols(t - cut);
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

Eigen::VectorXd threshold_sweep(const Eigen::Ref<const Eigen::MatrixXd>& train_values,
                                int steps) {
  if (steps < 2) throw ArgumentError("threshold sweep needs at least two steps");
  std::vector<double> pool(train_values.data(), train_values.data() + train_values.size());
  std::sort(pool.begin(), pool.end());
  Eigen::VectorXd thresholds(steps);
  const double lo = 0.95, hi = 0.999;
  for (int i = 0; i < steps; ++i) {
    const double p = lo + (hi - lo) * i / (steps - 1);
    // Lower empirical quantile, matching the hotspot convention.
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(pool.size())));
    rank = std::min(std::max<std::size_t>(rank, 1), pool.size());
    thresholds[i] = pool[rank - 1];
  }
  return thresholds;
}

}  // namespace stmix
