#include "stmix/predict.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

#include <json.hpp>

#include "stmix/error.hpp"

namespace stmix {

namespace {

// Deterministic parallel map over draw indices: each draw gets its own
// substream, so the schedule cannot change the output.
void parallel_over_draws(Eigen::Index b, int threads, const std::function<void(Eigen::Index)>& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || b < 2 * threads) {
    for (Eigen::Index i = 0; i < b; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<Eigen::Index> next{0};
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const Eigen::Index i = next.fetch_add(1);
        if (i >= b) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

void compensated_mean_sd(const Eigen::Ref<const Eigen::MatrixXd>& fields, Eigen::VectorXd& mean,
                         Eigen::VectorXd& sd) {
  const Eigen::Index b = fields.rows();
  const Eigen::Index n = fields.cols();
  if (b < 2) throw ArgumentError("ensemble needs at least two draws");
  mean.resize(n);
  sd.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double sum = 0.0, comp = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      const double y = fields(i, j) - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    const double m = sum / static_cast<double>(b);
    double sq = 0.0, sq_comp = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      const double d = fields(i, j) - m;
      const double y = d * d - sq_comp;
      const double t = sq + y;
      sq_comp = (t - sq) - y;
      sq = t;
    }
    mean[j] = m;
    sd[j] = std::sqrt(sq / static_cast<double>(b - 1));
  }
}

PredictiveEnsemble posterior_predictive(const PosteriorSamples& samples, const BasisSet& basis,
                                        const CovariateSeries& covariate, int t0,
                                        std::uint64_t seed, int threads) {
  const Eigen::Index b = samples.size();
  if (b < 2) throw ArgumentError("posterior predictive needs at least two retained draws");
  const TimeIndex idx{static_cast<int>(basis.weeks_per_year())};
  PredictiveEnsemble ensemble;
  ensemble.t0 = t0;
  ensemble.year = idx.year_of(t0);
  ensemble.week = idx.week_of(t0);
  // Fails with CoverageError when the covariate does not reach year t01.
  const Eigen::Vector2d x0_row = basis.cov_scale.row(covariate, ensemble.year);

  ensemble.fields.resize(b, basis.n_sites());
  parallel_over_draws(b, threads, [&](Eigen::Index d) {
    const Draw& draw = samples.draws[static_cast<std::size_t>(d)];
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(d));
    const Eigen::VectorXd mu = mean_surface_at(draw.coeffs, basis, x0_row, ensemble.week);
    const Eigen::VectorXd eps =
        draw_residual_field(draw.clusters, draw.weights.pi, basis.spatial.eofs, rng);
    ensemble.fields.row(d) = (mu + eps).transpose();
  });
  compensated_mean_sd(ensemble.fields, ensemble.mean, ensemble.sd);
  return ensemble;
}

DrcResult decadal_rate_of_change(const PosteriorSamples& samples, const BasisSet& basis,
                                 const CovariateSeries& covariate, int week) {
  if (week < 1 || week > basis.weeks_per_year())
    throw ArgumentError("week index outside the seasonal design");
  const Eigen::Index b = samples.size();
  if (b < 2) throw ArgumentError("need at least two retained draws");
  const int t1 = static_cast<int>(basis.n_years());
  if (t1 < 2) throw ArgumentError("decadal rate of change needs at least two fit years");
  const Eigen::Vector2d x0_first = basis.cov_scale.row(covariate, 1);
  const Eigen::Vector2d x0_last = basis.cov_scale.row(covariate, t1);

  Eigen::MatrixXd fields(b, basis.n_sites());
  for (Eigen::Index d = 0; d < b; ++d) {
    const Draw& draw = samples.draws[static_cast<std::size_t>(d)];
    const Eigen::VectorXd mu_last = mean_surface_at(draw.coeffs, basis, x0_last, week);
    const Eigen::VectorXd mu_first = mean_surface_at(draw.coeffs, basis, x0_first, week);
    fields.row(d) = (10.0 * (mu_last - mu_first) / static_cast<double>(t1 - 1)).transpose();
  }
  DrcResult result;
  Eigen::VectorXd sd;
  compensated_mean_sd(fields, result.mean, sd);
  result.t_stat = result.mean.array() / sd.array();
  return result;
}

namespace {

Eigen::Vector2d window_covariate_row(const BasisSet& basis, const CovariateSeries& covariate,
                                     int reference_year, int t0_years) {
  const int first = covariate.index_of_year(reference_year);
  const int last_needed = reference_year + t0_years - 1;
  const int last = covariate.index_of_year(last_needed);
  double sum = 0.0;
  for (int y = first; y <= last; ++y) sum += covariate.values[y - 1];
  const double window_mean = sum / static_cast<double>(t0_years);
  Eigen::Vector2d row;
  row[0] = 1.0 / std::sqrt(static_cast<double>(basis.cov_scale.n_years));
  row[1] = (window_mean - basis.cov_scale.mean) / basis.cov_scale.scale;
  return row;
}

}  // namespace

ReturnLevelResult return_level(const PosteriorSamples& samples, const BasisSet& basis,
                               const CovariateSeries& covariate, int week, int t0_years,
                               int reference_year) {
  if (t0_years < 1) throw ArgumentError("return period must be at least one year");
  if (week < 1 || week > basis.weeks_per_year())
    throw ArgumentError("week index outside the seasonal design");
  const Eigen::Index b = samples.size();
  if (b < 2) throw ArgumentError("need at least two retained draws");
  const Eigen::Vector2d x0_row = window_covariate_row(basis, covariate, reference_year, t0_years);
  const double level = 1.0 - 1.0 / (static_cast<double>(basis.weeks_per_year()) * t0_years);

  const Eigen::Index n = basis.n_sites();
  Eigen::MatrixXd fields(b, n);
  for (Eigen::Index d = 0; d < b; ++d) {
    const Draw& draw = samples.draws[static_cast<std::size_t>(d)];
    const Eigen::VectorXd mu = mean_surface_at(draw.coeffs, basis, x0_row, week);
    for (Eigen::Index site = 0; site < n; ++site)
      fields(d, site) = mu[site] + marginal_mixture_quantile(static_cast<int>(site), level,
                                                             draw.clusters, draw.weights.pi,
                                                             basis.spatial.eofs);
  }
  ReturnLevelResult result;
  Eigen::VectorXd sd;
  compensated_mean_sd(fields, result.level, sd);
  result.mc_se = sd / std::sqrt(static_cast<double>(b));
  return result;
}

double return_level_site(const PosteriorSamples& samples, const BasisSet& basis,
                         const CovariateSeries& covariate, int site, int week, int t0_years,
                         int reference_year) {
  if (site < 0 || site >= basis.n_sites()) throw ArgumentError("site index out of range");
  if (t0_years < 1) throw ArgumentError("return period must be at least one year");
  const Eigen::Index b = samples.size();
  if (b < 1) throw ArgumentError("need at least one retained draw");
  const Eigen::Vector2d x0_row = window_covariate_row(basis, covariate, reference_year, t0_years);
  const double level = 1.0 - 1.0 / (static_cast<double>(basis.weeks_per_year()) * t0_years);
  double sum = 0.0;
  for (Eigen::Index d = 0; d < b; ++d) {
    const Draw& draw = samples.draws[static_cast<std::size_t>(d)];
    const Eigen::VectorXd mu = mean_surface_at(draw.coeffs, basis, x0_row, week);
    sum += mu[site] + marginal_mixture_quantile(site, level, draw.clusters, draw.weights.pi,
                                                basis.spatial.eofs);
  }
  return sum / static_cast<double>(b);
}

ExceedanceResult joint_exceedance_prob(const PosteriorSamples& samples, const BasisSet& basis,
                                       const CovariateSeries& covariate,
                                       const std::vector<int>& d0,
                                       const ExceedanceThreshold& threshold, ExceedanceMode mode,
                                       int t0, std::uint64_t seed) {
  if (d0.empty()) throw ArgumentError("exceedance site set D0 is empty");
  for (int site : d0)
    if (site < 0 || site >= basis.n_sites())
      throw ArgumentError("exceedance site index out of range");
  if (threshold.quantile_mode && (!(threshold.level > 0.0) || !(threshold.level < 1.0)))
    throw ArgumentError("site-quantile level must lie in (0, 1)");

  const Eigen::Index b = samples.size();
  if (b < 2) throw ArgumentError("need at least two retained draws");
  const TimeIndex idx{static_cast<int>(basis.weeks_per_year())};
  const int year = idx.year_of(t0);
  const int week = idx.week_of(t0);
  const Eigen::Vector2d x0_row = basis.cov_scale.row(covariate, year);

  long hits = 0;
  for (Eigen::Index d = 0; d < b; ++d) {
    const Draw& draw = samples.draws[static_cast<std::size_t>(d)];
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(d));
    const Eigen::VectorXd mu = mean_surface_at(draw.coeffs, basis, x0_row, week);
    const Eigen::VectorXd eps =
        draw_residual_field(draw.clusters, draw.weights.pi, basis.spatial.eofs, rng);
    bool any = false, all = true;
    for (int site : d0) {
      double thr;
      if (threshold.quantile_mode) {
        thr = mu[site] + marginal_mixture_quantile(site, threshold.level, draw.clusters,
                                                   draw.weights.pi, basis.spatial.eofs);
      } else {
        thr = threshold.fixed;
      }
      const bool over = mu[site] + eps[site] > thr;
      any = any || over;
      all = all && over;
    }
    const bool event = (mode == ExceedanceMode::kUnion) ? any : all;
    if (event) ++hits;
  }
  ExceedanceResult result;
  result.probability = static_cast<double>(hits) / static_cast<double>(b);
  result.mc_se =
      std::sqrt(result.probability * (1.0 - result.probability) / static_cast<double>(b));
  return result;
}

void write_site_values_csv(const std::filesystem::path& path,
                           const Eigen::Ref<const Eigen::VectorXd>& values,
                           const Eigen::Ref<const Eigen::VectorXd>& mc_se) {
  if (values.size() != mc_se.size()) throw ShapeError("values and standard errors differ in length");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "site_id,value,mc_se\n";
  char buf[80];
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g", static_cast<long>(i + 1), values[i],
                  mc_se[i]);
    os << buf << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

void write_site_values_geojson(const std::filesystem::path& path,
                               const Eigen::Ref<const Eigen::MatrixXd>& coords,
                               const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (coords.rows() != values.size()) throw ShapeError("coordinates and values differ in length");
  nlohmann::json features = nlohmann::json::array();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    nlohmann::json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {coords(i, 0), coords(i, 1)}}};
    f["properties"] = {{"site_id", i + 1}, {"value", values[i]}};
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

}  // namespace stmix
