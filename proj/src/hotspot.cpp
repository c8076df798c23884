#include "stmix/hotspot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "stmix/error.hpp"

namespace stmix {

Eigen::VectorXd test_statistic(const PredictiveEnsemble& ensemble, double u) {
  const Eigen::Index n = ensemble.mean.size();
  const double root_b = std::sqrt(static_cast<double>(ensemble.fields.rows()));
  Eigen::VectorXd stats(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(ensemble.sd[i] > 0.0))
      throw DegeneracyError("predictive SD vanishes at site " + std::to_string(i + 1));
    stats[i] = root_b * (ensemble.mean[i] - u) / ensemble.sd[i];
  }
  return stats;
}

double critical_value(const PredictiveEnsemble& ensemble,
                      const Eigen::Ref<const Eigen::VectorXd>& test_stats, double u,
                      double alpha) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw ArgumentError("alpha must lie in (0, 1)");
  const Eigen::Index b = ensemble.fields.rows();
  const Eigen::Index n = ensemble.fields.cols();
  if (test_stats.size() != n) throw ShapeError("test statistics and ensemble disagree on sites");

  std::vector<double> minima(static_cast<std::size_t>(b));
  Eigen::Index n_empty = 0;
  for (Eigen::Index d = 0; d < b; ++d) {
    double m = std::numeric_limits<double>::infinity();  // empty set contributes no constraint
    bool hit = false;
    for (Eigen::Index s = 0; s < n; ++s) {
      if (ensemble.fields(d, s) >= u) {
        hit = true;
        m = std::min(m, test_stats[s]);
      }
    }
    if (!hit) ++n_empty;
    minima[static_cast<std::size_t>(d)] = m;
  }
  if (n_empty == b)
    throw UndefinedRegionError("threshold " + std::to_string(u) +
                               " is exceeded in no predictive draw; the region is undefined");
  std::sort(minima.begin(), minima.end());
  // Lower (type-1) empirical quantile: the ceil(alpha*B)-th order statistic.
  Eigen::Index rank = static_cast<Eigen::Index>(
      std::ceil(alpha * static_cast<double>(b)));
  rank = std::max<Eigen::Index>(rank, 1);
  return minima[static_cast<std::size_t>(rank - 1)];
}

HotspotResult estimate_hotspot(const PredictiveEnsemble& ensemble, double u, double alpha) {
  HotspotResult result;
  result.alpha = alpha;
  result.threshold = u;
  result.t0 = ensemble.t0;
  result.test_stats = test_statistic(ensemble, u);
  result.critical_value = critical_value(ensemble, result.test_stats, u, alpha);
  for (Eigen::Index i = 0; i < result.test_stats.size(); ++i)
    if (result.test_stats[i] >= result.critical_value) result.region.push_back(static_cast<int>(i));
  return result;
}

HotspotResult estimate_hotspot(const PosteriorSamples& samples, const BasisSet& basis,
                               const CovariateSeries& covariate, int t0, double u, double alpha,
                               std::uint64_t seed, int threads) {
  const PredictiveEnsemble ensemble =
      posterior_predictive(samples, basis, covariate, t0, seed, threads);
  return estimate_hotspot(ensemble, u, alpha);
}

void write_hotspot_csv(const HotspotResult& result, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "site_id,test_stat,in_region\n";
  std::vector<char> in_region(static_cast<std::size_t>(result.test_stats.size()), 0);
  for (int s : result.region) in_region[static_cast<std::size_t>(s)] = 1;
  char buf[64];
  for (Eigen::Index i = 0; i < result.test_stats.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%d", static_cast<long>(i + 1),
                  result.test_stats[i], static_cast<int>(in_region[static_cast<std::size_t>(i)]));
    os << buf << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

void write_hotspot_geojson(const HotspotResult& result,
                           const Eigen::Ref<const Eigen::MatrixXd>& coords,
                           const std::filesystem::path& path) {
  if (coords.rows() != result.test_stats.size())
    throw ShapeError("coordinates and test statistics differ in length");
  std::vector<char> in_region(static_cast<std::size_t>(result.test_stats.size()), 0);
  for (int s : result.region) in_region[static_cast<std::size_t>(s)] = 1;
  nlohmann::json features = nlohmann::json::array();
  for (Eigen::Index i = 0; i < result.test_stats.size(); ++i) {
    nlohmann::json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {coords(i, 0), coords(i, 1)}}};
    f["properties"] = {{"site_id", i + 1},
                       {"value", result.test_stats[i]},
                       {"in_region", static_cast<bool>(in_region[static_cast<std::size_t>(i)])}};
    features.push_back(std::move(f));
  }
  nlohmann::json doc;
  doc["type"] = "FeatureCollection";
  doc["features"] = std::move(features);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << doc.dump(1) << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

void write_hotspot_summary_json(const HotspotResult& result, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["u"] = result.threshold;
  doc["alpha"] = result.alpha;
  doc["critical_value"] = result.critical_value;
  doc["region_size"] = result.region.size();
  doc["t0"] = result.t0;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << doc.dump(1) << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace stmix
