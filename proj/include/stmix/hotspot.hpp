#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "stmix/predict.hpp"

namespace stmix {

struct HotspotResult {
  std::vector<int> region;       // 0-based site indices of D0_{u+}
  double critical_value = 0.0;   // C_alpha
  Eigen::VectorXd test_stats;    // length N
  double alpha = 0.0;
  double threshold = 0.0;
  int t0 = 0;
};

// Per-site statistic sqrt(B) * (mean - u) / sd. Errors when any ensemble SD
// vanishes, naming the site.
Eigen::VectorXd test_statistic(const PredictiveEnsemble& ensemble, double u);

// Family-wise critical value: per draw b, take the minimum test statistic
// over the draw's exceedance set E^b = {n : Y^b_n >= u} (+inf when empty),
// then the lower (type-1) empirical alpha-quantile over draws. Errors when
// every draw's exceedance set is empty.
double critical_value(const PredictiveEnsemble& ensemble,
                      const Eigen::Ref<const Eigen::VectorXd>& test_stats, double u,
                      double alpha);

// Full pipeline: ensemble -> statistics -> critical value -> region, the
// super-level set of the statistic at the critical value.
HotspotResult estimate_hotspot(const PosteriorSamples& samples, const BasisSet& basis,
                               const CovariateSeries& covariate, int t0, double u, double alpha,
                               std::uint64_t seed, int threads = 1);

HotspotResult estimate_hotspot(const PredictiveEnsemble& ensemble, double u, double alpha);

void write_hotspot_csv(const HotspotResult& result, const std::filesystem::path& path);
void write_hotspot_geojson(const HotspotResult& result,
                           const Eigen::Ref<const Eigen::MatrixXd>& coords,
                           const std::filesystem::path& path);
void write_hotspot_summary_json(const HotspotResult& result, const std::filesystem::path& path);

}  // namespace stmix
