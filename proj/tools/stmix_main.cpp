// stmix command-line pipeline: simulate, prepare-basis, fit, diagnose,
// predict, hotspot, score. Each run reads a sectioned key/value config plus
// flag overrides, writes its artifacts, and echoes the resolved config into a
// manifest for reproducibility.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "stmix/basis.hpp"
#include "stmix/diagnostics.hpp"
#include "stmix/error.hpp"
#include "stmix/hotspot.hpp"
#include "stmix/ingest.hpp"
#include "stmix/model.hpp"
#include "stmix/predict.hpp"
#include "stmix/sampler.hpp"
#include "stmix/score.hpp"
#include "stmix/version.hpp"

namespace fs = std::filesystem;
using stmix::cli::ConfigMap;
using stmix::cli::UsageError;

namespace {

// --- small helpers -----------------------------------------------------------

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw stmix::IoError("cannot hash missing artifact '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!is) break;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Derived seed for per-time scoring streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed;
  return stmix::splitmix64(s) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
}

double haversine_km(double lon1, double lat1, double lon2, double lat2) {
  constexpr double radius_km = 6371.0;
  const double to_rad = M_PI / 180.0;
  const double dlat = (lat2 - lat1) * to_rad;
  const double dlon = (lon2 - lon1) * to_rad;
  const double a = std::sin(0.5 * dlat) * std::sin(0.5 * dlat) +
                   std::cos(lat1 * to_rad) * std::cos(lat2 * to_rad) * std::sin(0.5 * dlon) *
                       std::sin(0.5 * dlon);
  return 2.0 * radius_km * std::asin(std::min(1.0, std::sqrt(a)));
}

// Read-and-record config access, so the manifest echoes resolved values.
long res_int(ConfigMap& config, const std::string& key, long fallback) {
  const long v = config.integer_or(key, fallback);
  config.set(key, std::to_string(v));
  return v;
}
double res_num(ConfigMap& config, const std::string& key, double fallback) {
  const double v = config.num_or(key, fallback);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  config.set(key, buf);
  return v;
}
std::string res_str(ConfigMap& config, const std::string& key, const std::string& fallback) {
  const std::string v = config.str_or(key, fallback);
  config.set(key, v);
  return v;
}

fs::path output_dir(ConfigMap& config) {
  const fs::path out = res_str(config, "paths.output", "out");
  fs::create_directories(out);
  return out;
}

void write_manifest(const fs::path& out, const std::string& subcommand, const ConfigMap& config,
                    const std::vector<fs::path>& artifacts, double elapsed_seconds) {
  nlohmann::json doc;
  doc["tool"] = std::string("stmix ") + stmix::kVersion;
  doc["subcommand"] = subcommand;
  doc["config"] = nlohmann::json::object();
  for (const auto& [key, value] : config.entries()) doc["config"][key] = value;
  doc["artifacts"] = nlohmann::json::object();
  for (const fs::path& artifact : artifacts)
    doc["artifacts"][artifact.filename().string()] = hex64(fnv1a_file(artifact));
  doc["timings"] = {{"elapsed_seconds", elapsed_seconds}};
  std::ofstream os(out / (subcommand + "_manifest.json"), std::ios::trunc);
  if (!os) throw stmix::IoError("cannot write manifest");
  os << doc.dump(2) << '\n';
}

stmix::GriddedDataset load_dataset_from(ConfigMap& config) {
  const std::string path = config.str("paths.dataset");
  const std::string format = res_str(config, "paths.dataset_format", "binary");
  const int t2 = static_cast<int>(res_int(config, "model.weeks_per_year", 52));
  return stmix::load_dataset(path, stmix::dataset_format_from_string(format), t2);
}

stmix::McmcConfig mcmc_config_from(ConfigMap& config) {
  stmix::McmcConfig mcmc;
  mcmc.n_iter = static_cast<int>(res_int(config, "mcmc.n_iter", 60000));
  mcmc.burn_in = static_cast<int>(res_int(config, "mcmc.burn_in", 10000));
  mcmc.thin = static_cast<int>(res_int(config, "mcmc.thin", 5));
  mcmc.seed = static_cast<std::uint64_t>(res_int(config, "mcmc.seed", 1));
  mcmc.n_components = static_cast<int>(res_int(config, "model.k", 10));
  const double df_min = res_num(config, "model.df_min", 2.1);
  const double df_max = res_num(config, "model.df_max", 40.0);
  const double df_step = res_num(config, "model.df_step", 0.1);
  mcmc.df_grid.min_tenths = static_cast<int>(std::lround(df_min * 10.0));
  mcmc.df_grid.max_tenths = static_cast<int>(std::lround(df_max * 10.0));
  mcmc.df_grid.step_tenths = std::max(1, static_cast<int>(std::lround(df_step * 10.0)));
  stmix::Hyperparameters& h = mcmc.hyper;
  h.s2_intercept = res_num(config, "model.s2_intercept", h.s2_intercept);
  h.s2_slope = res_num(config, "model.s2_slope", h.s2_slope);
  h.shape_intercept = res_num(config, "model.shape_intercept", h.shape_intercept);
  h.rate_intercept = res_num(config, "model.rate_intercept", h.rate_intercept);
  h.shape_slope = res_num(config, "model.shape_slope", h.shape_slope);
  h.rate_slope = res_num(config, "model.rate_slope", h.rate_slope);
  h.nugget_shape = res_num(config, "model.nugget_shape", h.nugget_shape);
  h.nugget_rate = res_num(config, "model.nugget_rate", h.nugget_rate);
  h.concentration_shape = res_num(config, "model.concentration_shape", h.concentration_shape);
  h.concentration_rate = res_num(config, "model.concentration_rate", h.concentration_rate);
  return mcmc;
}

// Flat week index for a calendar (year, week) pair, anchored so that the
// first covariate year is year index 1.
int flat_time(const stmix::BasisSet& basis, const stmix::CovariateSeries& covariate,
              ConfigMap& config) {
  const int year = static_cast<int>(config.integer("task.year"));
  const int week = static_cast<int>(res_int(config, "task.week", 1));
  const int year_index = covariate.index_of_year(year);
  if (week < 1 || week > basis.weeks_per_year()) throw UsageError("task.week outside 1..T2");
  return stmix::TimeIndex{static_cast<int>(basis.weeks_per_year())}.flat(year_index, week);
}

std::vector<int> resolve_d0(const stmix::BasisSet& basis, ConfigMap& config) {
  if (config.has("task.d0_sites")) {
    std::vector<int> d0;
    for (double v : config.list("task.d0_sites")) d0.push_back(static_cast<int>(v) - 1);
    return d0;
  }
  const double lon = config.num("task.d0_center_lon");
  const double lat = config.num("task.d0_center_lat");
  const double radius = res_num(config, "task.d0_radius_km", 0.0);
  std::vector<int> d0;
  int nearest = 0;
  double nearest_km = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < basis.n_sites(); ++i) {
    const double km = haversine_km(lon, lat, basis.coords(i, 0), basis.coords(i, 1));
    if (km <= radius) d0.push_back(static_cast<int>(i));
    if (km < nearest_km) {
      nearest_km = km;
      nearest = static_cast<int>(i);
    }
  }
  if (d0.empty()) d0.push_back(nearest);  // 0 km: the center cell alone
  return d0;
}

// --- subcommands -------------------------------------------------------------

void run_simulate(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const std::uint64_t seed = static_cast<std::uint64_t>(res_int(config, "mcmc.seed", 1));

  const int n_lon = static_cast<int>(res_int(config, "simulate.n_lon", 5));
  const int n_lat = static_cast<int>(res_int(config, "simulate.n_lat", 4));
  const double lon_min = res_num(config, "simulate.lon_min", 34.0);
  const double lon_max = res_num(config, "simulate.lon_max", 38.0);
  const double lat_min = res_num(config, "simulate.lat_min", 18.0);
  const double lat_max = res_num(config, "simulate.lat_max", 22.0);
  const int years = static_cast<int>(res_int(config, "simulate.years", 4));
  const int t2 = static_cast<int>(res_int(config, "model.weeks_per_year", 52));
  const int horizon = static_cast<int>(res_int(config, "simulate.horizon_years", 10));
  const int start_year = static_cast<int>(res_int(config, "simulate.start_year", 1985));
  const int p_seasonal = static_cast<int>(res_int(config, "model.p_seasonal", 6));
  const int s_axis1 = static_cast<int>(res_int(config, "simulate.s_axis1", 4));
  const int s_axis2 = static_cast<int>(res_int(config, "simulate.s_axis2", 4));
  const double prune = res_num(config, "model.prune_mass", 0.99);
  const int rank = static_cast<int>(res_int(config, "model.l", 3));
  const double eig_first = res_num(config, "simulate.eigenvalue_first", 2.0);
  const double eig_ratio = res_num(config, "simulate.eigenvalue_ratio", 0.5);
  const double beta_scale = res_num(config, "simulate.beta_scale", 5.0);
  const double cov_start = res_num(config, "simulate.covariate_start", 27.0);
  const double cov_trend = res_num(config, "simulate.covariate_trend", 0.03);

  const int n_sites = n_lon * n_lat;
  Eigen::MatrixXd coords(n_sites, 2);
  for (int a = 0; a < n_lon; ++a)
    for (int b = 0; b < n_lat; ++b) {
      coords(a * n_lat + b, 0) = lon_min + (lon_max - lon_min) * a / std::max(1, n_lon - 1);
      coords(a * n_lat + b, 1) = lat_min + (lat_max - lat_min) * b / std::max(1, n_lat - 1);
    }

  stmix::CovariateSeries covariate;
  for (int i = 0; i < years + horizon; ++i) {
    covariate.years.push_back(start_year + i);
  }
  covariate.values.resize(years + horizon);
  for (int i = 0; i < years + horizon; ++i) covariate.values[i] = cov_start + cov_trend * i;

  stmix::BasisSet basis;
  basis.x0 = stmix::standardize_covariate(covariate, years);
  basis.cov_scale = stmix::covariate_scale(covariate, years);
  basis.x1 = stmix::seasonal_spline_matrix(t2, p_seasonal);
  stmix::SpatialSplineLayout layout;
  layout.n_axis1 = s_axis1;
  layout.n_axis2 = s_axis2;
  layout.prune_mass = prune;
  const stmix::SpatialSplineResult spatial = stmix::spatial_spline_matrix(coords, layout);

  stmix::Rng rng = stmix::Rng::substream(seed, 0xb51);
  const Eigen::MatrixXd gauss = rng.normal_matrix(n_sites, rank);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  basis.spatial.eofs =
      qr.householderQ() * Eigen::MatrixXd::Identity(n_sites, rank);
  basis.spatial.eigenvalues.resize(rank);
  for (int i = 0; i < rank; ++i) basis.spatial.eigenvalues[i] = eig_first * std::pow(eig_ratio, i);
  std::tie(basis.x2_in, basis.x2_out) = stmix::split_projection(spatial.design, basis.spatial.eofs);
  basis.coords = coords;
  basis.validate();

  const int k = static_cast<int>(res_int(config, "model.k", 2));
  res_str(config, "simulate.pi", "0.7,0.3");
  res_str(config, "simulate.df", "30,4");
  res_str(config, "simulate.nugget2", "0.1,0.1");
  res_str(config, "simulate.dispersion_scale", "1,1");
  const std::vector<double> pi_list = config.list("simulate.pi");
  const std::vector<double> df_list = config.list("simulate.df");
  const std::vector<double> nugget_list = config.list("simulate.nugget2");
  const std::vector<double> scale_list = config.list("simulate.dispersion_scale");
  if (static_cast<int>(pi_list.size()) != k || static_cast<int>(df_list.size()) != k ||
      static_cast<int>(nugget_list.size()) != k || static_cast<int>(scale_list.size()) != k)
    throw UsageError("simulate component lists must all have model.k entries");

  stmix::ModelParameters truth;
  truth.weights.pi = Eigen::Map<const Eigen::VectorXd>(pi_list.data(), k);
  if (std::fabs(truth.weights.pi.sum() - 1.0) > 1e-9)
    throw UsageError("simulate.pi must sum to 1");
  truth.weights.sticks = stmix::sticks_from_weights(truth.weights.pi);
  truth.weights.pi = stmix::stick_breaking(truth.weights.sticks);
  truth.weights.concentration = 1.0;
  truth.clusters.resize(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    truth.clusters[static_cast<std::size_t>(c)].dispersion =
        scale_list[static_cast<std::size_t>(c)] *
        Eigen::MatrixXd(basis.spatial.eigenvalues.asDiagonal());
    truth.clusters[static_cast<std::size_t>(c)].nugget2 = nugget_list[static_cast<std::size_t>(c)];
    truth.clusters[static_cast<std::size_t>(c)].df = df_list[static_cast<std::size_t>(c)];
  }
  truth.coeffs = stmix::MeanCoefficients::zeros(basis.p());
  stmix::Rng beta_rng = stmix::Rng::substream(seed, 0xbe7a);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      truth.coeffs.beta[i][j] = beta_scale * beta_rng.normal_vector(basis.p());

  const auto [dataset, latent] = stmix::generate_synthetic(
      truth.coeffs, truth.clusters, truth.weights.pi, basis, years * t2, seed);
  (void)latent;

  stmix::save_dataset(dataset, out / "dataset.bin", stmix::DatasetFormat::kBinaryMatrix);
  stmix::save_covariate_csv(covariate, out / "covariate.csv");
  basis.save(out / "truth_basis.stmx");
  stmix::save_parameters(truth, out / "truth_params.stmx");

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "simulate", config,
                 {out / "dataset.bin", out / "covariate.csv", out / "truth_basis.stmx",
                  out / "truth_params.stmx"},
                 elapsed);
  std::cout << "simulate: wrote " << dataset.n_sites() << " sites x " << dataset.n_weeks()
            << " weeks to " << out << "\n";
}

void run_prepare_basis(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const stmix::GriddedDataset data = load_dataset_from(config);
  const stmix::CovariateSeries covariate = stmix::load_covariate_csv(config.str("paths.covariate"));

  stmix::BasisOptions options;
  options.p_seasonal = static_cast<int>(res_int(config, "model.p_seasonal", 12));
  options.layout.n_axis1 = static_cast<int>(res_int(config, "model.n_axis1", 30));
  options.layout.n_axis2 = static_cast<int>(res_int(config, "model.n_axis2", 10));
  options.layout.rotation_deg = res_num(config, "model.rotation_deg", 0.0);
  options.layout.prune_mass = res_num(config, "model.prune_mass", 0.99);
  if (config.has("model.l"))
    options.rule = stmix::EofRule::count(static_cast<int>(config.integer("model.l")));
  else
    options.rule = stmix::EofRule::relative(res_num(config, "model.q", 0.01));

  const stmix::BasisSet basis = stmix::build_basis_set(data, covariate, options);
  const fs::path basis_path = res_str(config, "paths.basis", (out / "basis.stmx").string());
  basis.save(basis_path);

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "prepare-basis", config, {basis_path}, elapsed);
  std::cout << "prepare-basis: L = " << basis.rank() << ", P_S = " << basis.p_spatial()
            << ", P_T = " << basis.p_seasonal() << ", wrote " << basis_path << "\n";
}

void run_fit(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const stmix::GriddedDataset data = load_dataset_from(config);
  const stmix::BasisSet basis = stmix::BasisSet::load(config.str("paths.basis"));
  const stmix::McmcConfig mcmc = mcmc_config_from(config);

  const stmix::PosteriorSamples samples = stmix::gibbs_fit(data, basis, mcmc);
  const fs::path store = res_str(config, "paths.samples", (out / "samples").string());
  samples.save(store);

  std::vector<fs::path> chunks;
  for (const auto& entry : fs::directory_iterator(store))
    if (entry.path().filename().string().rfind("chunk_", 0) == 0) chunks.push_back(entry.path());
  std::sort(chunks.begin(), chunks.end());
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "fit", config, chunks, elapsed);
  std::cout << "fit: retained " << samples.size() << " draws in " << elapsed << " s, store at "
            << store << "\n";
}

void run_diagnose(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const stmix::PosteriorSamples samples = stmix::PosteriorSamples::load(config.str("paths.samples"));
  const std::vector<stmix::ChainSummary> rows = stmix::diagnostics(samples);
  stmix::write_diagnostics_csv(rows, out / "diagnostics.csv");
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "diagnose", config, {out / "diagnostics.csv"}, elapsed);
  std::cout << "diagnose: wrote " << rows.size() << " parameter rows\n";
}

void run_predict(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const stmix::PosteriorSamples samples = stmix::PosteriorSamples::load(config.str("paths.samples"));
  const stmix::BasisSet basis = stmix::BasisSet::load(config.str("paths.basis"));
  const stmix::CovariateSeries covariate = stmix::load_covariate_csv(config.str("paths.covariate"));
  const std::uint64_t seed = static_cast<std::uint64_t>(res_int(config, "mcmc.seed", 1));
  const int threads = static_cast<int>(res_int(config, "task.threads", 1));
  const std::string task = res_str(config, "task.task", "ensemble");
  std::vector<fs::path> artifacts;

  if (task == "ensemble") {
    const int t0 = flat_time(basis, covariate, config);
    const stmix::PredictiveEnsemble ensemble =
        stmix::posterior_predictive(samples, basis, covariate, t0, seed, threads);
    const Eigen::VectorXd mc_se =
        ensemble.sd / std::sqrt(static_cast<double>(ensemble.fields.rows()));
    stmix::write_site_values_csv(out / "ensemble_mean.csv", ensemble.mean, mc_se);
    stmix::write_site_values_geojson(out / "ensemble_mean.geojson", basis.coords, ensemble.mean);
    artifacts = {out / "ensemble_mean.csv", out / "ensemble_mean.geojson"};
  } else if (task == "drc") {
    const int week = static_cast<int>(res_int(config, "task.week", 1));
    const stmix::DrcResult drc = stmix::decadal_rate_of_change(samples, basis, covariate, week);
    std::ofstream os(out / "drc.csv", std::ios::trunc);
    if (!os) throw stmix::IoError("cannot write drc.csv");
    os << "site_id,value,t_stat\n";
    for (Eigen::Index i = 0; i < drc.mean.size(); ++i)
      os << (i + 1) << ',' << drc.mean[i] << ',' << drc.t_stat[i] << '\n';
    os.close();
    stmix::write_site_values_geojson(out / "drc.geojson", basis.coords, drc.mean);
    artifacts = {out / "drc.csv", out / "drc.geojson"};
  } else if (task == "return-level") {
    const int week = static_cast<int>(res_int(config, "task.week", 1));
    const int t0_years = static_cast<int>(res_int(config, "task.t0_years", 10));
    const int reference_year = static_cast<int>(config.integer("task.reference_year"));
    const stmix::ReturnLevelResult rl =
        stmix::return_level(samples, basis, covariate, week, t0_years, reference_year);
    stmix::write_site_values_csv(out / "return_level.csv", rl.level, rl.mc_se);
    stmix::write_site_values_geojson(out / "return_level.geojson", basis.coords, rl.level);
    artifacts = {out / "return_level.csv", out / "return_level.geojson"};
  } else if (task == "exceedance") {
    const int t0 = flat_time(basis, covariate, config);
    const std::vector<int> d0 = resolve_d0(basis, config);
    const std::string mode_name = res_str(config, "task.mode", "union");
    stmix::ExceedanceMode mode;
    if (mode_name == "union")
      mode = stmix::ExceedanceMode::kUnion;
    else if (mode_name == "intersection")
      mode = stmix::ExceedanceMode::kIntersection;
    else
      throw UsageError("task.mode must be union or intersection");
    stmix::ExceedanceThreshold threshold;
    if (config.has("task.u") && config.has("task.p"))
      throw UsageError("set either task.u or task.p, not both");
    if (config.has("task.u"))
      threshold = stmix::ExceedanceThreshold::fixed_value(config.num("task.u"));
    else if (config.has("task.p"))
      threshold = stmix::ExceedanceThreshold::site_quantile(config.num("task.p"));
    else
      throw UsageError("exceedance needs task.u (fixed) or task.p (site quantile)");
    const stmix::ExceedanceResult result =
        stmix::joint_exceedance_prob(samples, basis, covariate, d0, threshold, mode, t0, seed);
    nlohmann::json doc;
    doc["probability"] = result.probability;
    doc["mc_se"] = result.mc_se;
    doc["mode"] = mode_name;
    doc["d0_size"] = d0.size();
    doc["threshold"] = threshold.quantile_mode ? threshold.level : threshold.fixed;
    doc["threshold_kind"] = threshold.quantile_mode ? "site-quantile" : "fixed";
    std::ofstream os(out / "exceedance.json", std::ios::trunc);
    os << doc.dump(1) << '\n';
    os.close();
    std::cout << mode_name << " exceedance probability = " << result.probability
              << " (mc_se " << result.mc_se << ", |D0| = " << d0.size() << ")\n";
    artifacts = {out / "exceedance.json"};
  } else {
    throw UsageError("unknown predict task '" + task + "'");
  }

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "predict", config, artifacts, elapsed);
}

void run_hotspot(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const stmix::PosteriorSamples samples = stmix::PosteriorSamples::load(config.str("paths.samples"));
  const stmix::BasisSet basis = stmix::BasisSet::load(config.str("paths.basis"));
  const stmix::CovariateSeries covariate = stmix::load_covariate_csv(config.str("paths.covariate"));
  const std::uint64_t seed = static_cast<std::uint64_t>(res_int(config, "mcmc.seed", 1));
  const int threads = static_cast<int>(res_int(config, "task.threads", 1));
  const int t0 = flat_time(basis, covariate, config);
  const double u = config.num("task.u");
  const double alpha = res_num(config, "task.alpha", 0.05);

  const stmix::HotspotResult result =
      stmix::estimate_hotspot(samples, basis, covariate, t0, u, alpha, seed, threads);
  stmix::write_hotspot_csv(result, out / "hotspot.csv");
  stmix::write_hotspot_geojson(result, basis.coords, out / "hotspot.geojson");
  stmix::write_hotspot_summary_json(result, out / "hotspot_summary.json");

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "hotspot", config,
                 {out / "hotspot.csv", out / "hotspot.geojson", out / "hotspot_summary.json"},
                 elapsed);
  std::cout << "hotspot: critical value " << result.critical_value << ", region size "
            << result.region.size() << " of " << result.test_stats.size() << "\n";
}

void run_score(ConfigMap& config) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = output_dir(config);
  const stmix::GriddedDataset data = load_dataset_from(config);
  const stmix::CovariateSeries covariate = stmix::load_covariate_csv(config.str("paths.covariate"));
  const int cut = static_cast<int>(config.integer("task.cut"));
  const int steps = static_cast<int>(res_int(config, "task.steps", 10));
  const std::uint64_t seed = static_cast<std::uint64_t>(res_int(config, "mcmc.seed", 1));
  const int threads = static_cast<int>(res_int(config, "task.threads", 1));
  const std::string model_name = res_str(config, "task.model_name", "ltp-dpm");

  const auto [train, test] = stmix::chronological_split(data, cut);
  const Eigen::VectorXd thresholds = stmix::threshold_sweep(train.values, steps);

  const auto mean_scores = [&](const stmix::PosteriorSamples& samples,
                               const stmix::BasisSet& basis) {
    Eigen::VectorXd bs = Eigen::VectorXd::Zero(steps);
    Eigen::VectorXd tw = Eigen::VectorXd::Zero(steps);
    long cells = 0;
    for (int j = 0; j < test.n_weeks(); ++j) {
      const int t = cut + 1 + j;
      const stmix::PredictiveEnsemble ensemble = stmix::posterior_predictive(
          samples, basis, covariate, t, derive_seed(seed, static_cast<std::uint64_t>(t)), threads);
      for (Eigen::Index site = 0; site < test.n_sites(); ++site) {
        const stmix::PredictiveCdf cdf =
            stmix::PredictiveCdf::from_draws(ensemble.fields.col(site));
        const double y = test.values(site, j);
        for (int s = 0; s < steps; ++s) {
          bs[s] += stmix::brier_score(y, cdf, thresholds[s]);
          tw[s] += stmix::twcrps(y, cdf, thresholds[s]);
        }
        ++cells;
      }
    }
    bs /= static_cast<double>(cells);
    tw /= static_cast<double>(cells);
    return std::make_pair(bs, tw);
  };

  const stmix::PosteriorSamples model_samples =
      stmix::PosteriorSamples::load(config.str("paths.samples"));
  const stmix::BasisSet model_basis = stmix::BasisSet::load(config.str("paths.basis"));
  const stmix::PosteriorSamples bench_samples =
      stmix::PosteriorSamples::load(config.str("paths.benchmark_samples"));
  const stmix::BasisSet bench_basis = stmix::BasisSet::load(
      config.str_or("paths.benchmark_basis", config.str("paths.basis")));

  const auto [bs_model, tw_model] = mean_scores(model_samples, model_basis);
  const auto [bs_bench, tw_bench] = mean_scores(bench_samples, bench_basis);

  std::ofstream os(out / "scores.csv", std::ios::trunc);
  if (!os) throw stmix::IoError("cannot write scores.csv");
  os << "model,u,bss,twcrpss\n";
  for (int s = 0; s < steps; ++s)
    os << model_name << ',' << thresholds[s] << ','
       << stmix::skill_score(bs_model[s], bs_bench[s]) << ','
       << stmix::skill_score(tw_model[s], tw_bench[s]) << '\n';
  os.close();

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "score", config, {out / "scores.csv"}, elapsed);
  std::cout << "score: wrote skill table over " << steps << " thresholds\n";
}

// --- option plumbing ---------------------------------------------------------

struct OverrideSet {
  struct Entry {
    std::shared_ptr<std::string> slot;
    std::string key;
    CLI::Option* option;
  };
  std::vector<Entry> entries;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& description) {
    auto slot = std::make_shared<std::string>();
    CLI::Option* option = cmd->add_option(flag, *slot, description);
    entries.push_back({slot, key, option});
  }
  void apply(ConfigMap& config) const {
    for (const Entry& entry : entries)
      if (entry.option->count() > 0) config.set(entry.key, *entry.slot);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stmix: low-rank spatial t-process mixtures, hotspot and tail inference"};
  app.set_version_flag("--version", std::string("stmix ") + stmix::kVersion);
  app.require_subcommand(1);

  struct Command {
    CLI::App* cmd;
    std::string config_path;
    OverrideSet overrides;
    void (*run)(ConfigMap&);
  };
  std::vector<std::unique_ptr<Command>> commands;

  const auto add_command = [&](const std::string& name, const std::string& description,
                               void (*run)(ConfigMap&)) -> Command& {
    auto command = std::make_unique<Command>();
    command->cmd = app.add_subcommand(name, description);
    command->run = run;
    command->cmd->add_option("--config", command->config_path, "sectioned key/value config file");
    OverrideSet& ov = command->overrides;
    CLI::App* cmd = command->cmd;
    ov.add(cmd, "--output", "paths.output", "output directory");
    ov.add(cmd, "--dataset", "paths.dataset", "dataset path");
    ov.add(cmd, "--dataset-format", "paths.dataset_format", "csv or binary");
    ov.add(cmd, "--covariate", "paths.covariate", "covariate CSV path");
    ov.add(cmd, "--basis", "paths.basis", "basis bundle path");
    ov.add(cmd, "--samples", "paths.samples", "samples store directory");
    ov.add(cmd, "--seed", "mcmc.seed", "random seed");
    ov.add(cmd, "--threads", "task.threads", "worker thread cap");
    commands.push_back(std::move(command));
    return *commands.back();
  };

  add_command("simulate", "draw a synthetic dataset plus ground-truth bundles", run_simulate);
  {
    Command& c = add_command("prepare-basis", "build the design/EOF basis bundle from data",
                             run_prepare_basis);
    c.overrides.add(c.cmd, "--l", "model.l", "explicit EOF count");
    c.overrides.add(c.cmd, "--q", "model.q", "relative eigenvalue threshold");
    c.overrides.add(c.cmd, "--p-seasonal", "model.p_seasonal", "seasonal basis size");
    c.overrides.add(c.cmd, "--n-axis1", "model.n_axis1", "spatial basis count, first axis");
    c.overrides.add(c.cmd, "--n-axis2", "model.n_axis2", "spatial basis count, second axis");
    c.overrides.add(c.cmd, "--rotation-deg", "model.rotation_deg", "spline axis rotation");
    c.overrides.add(c.cmd, "--prune-mass", "model.prune_mass", "tensor column mass to keep");
  }
  {
    Command& c = add_command("fit", "run the Gibbs sampler and persist posterior draws", run_fit);
    c.overrides.add(c.cmd, "--k", "model.k", "mixture components");
    c.overrides.add(c.cmd, "--n-iter", "mcmc.n_iter", "total iterations");
    c.overrides.add(c.cmd, "--burn-in", "mcmc.burn_in", "burn-in iterations");
    c.overrides.add(c.cmd, "--thin", "mcmc.thin", "thinning stride");
    c.overrides.add(c.cmd, "--df-min", "model.df_min", "df grid minimum");
    c.overrides.add(c.cmd, "--df-max", "model.df_max", "df grid maximum");
    c.overrides.add(c.cmd, "--df-step", "model.df_step", "df grid step");
  }
  add_command("diagnose", "effective sample sizes and split R-hat per parameter", run_diagnose);
  {
    Command& c = add_command("predict", "posterior predictive summaries", run_predict);
    c.overrides.add(c.cmd, "--task", "task.task", "ensemble, drc, return-level or exceedance");
    c.overrides.add(c.cmd, "--year", "task.year", "calendar year of t0");
    c.overrides.add(c.cmd, "--week", "task.week", "week of year of t0");
    c.overrides.add(c.cmd, "--u", "task.u", "fixed threshold");
    c.overrides.add(c.cmd, "--p", "task.p", "site quantile level");
    c.overrides.add(c.cmd, "--mode", "task.mode", "union or intersection");
    c.overrides.add(c.cmd, "--t0-years", "task.t0_years", "return period in years");
    c.overrides.add(c.cmd, "--reference-year", "task.reference_year", "return window start");
    c.overrides.add(c.cmd, "--d0-sites", "task.d0_sites", "1-based site list for D0");
    c.overrides.add(c.cmd, "--d0-center-lon", "task.d0_center_lon", "D0 center longitude");
    c.overrides.add(c.cmd, "--d0-center-lat", "task.d0_center_lat", "D0 center latitude");
    c.overrides.add(c.cmd, "--d0-radius-km", "task.d0_radius_km", "great-circle radius");
  }
  {
    Command& c = add_command("hotspot", "family-wise corrected exceedance region", run_hotspot);
    c.overrides.add(c.cmd, "--year", "task.year", "calendar year of t0");
    c.overrides.add(c.cmd, "--week", "task.week", "week of year of t0");
    c.overrides.add(c.cmd, "--u", "task.u", "exceedance threshold");
    c.overrides.add(c.cmd, "--alpha", "task.alpha", "family-wise error rate");
  }
  {
    Command& c = add_command("score", "held-out Brier / tail-weighted CRPS skill", run_score);
    c.overrides.add(c.cmd, "--cut", "task.cut", "train/test split week (year boundary)");
    c.overrides.add(c.cmd, "--steps", "task.steps", "number of thresholds");
    c.overrides.add(c.cmd, "--model-name", "task.model_name", "label in the score table");
    c.overrides.add(c.cmd, "--benchmark-samples", "paths.benchmark_samples",
                    "benchmark samples store");
    c.overrides.add(c.cmd, "--benchmark-basis", "paths.benchmark_basis", "benchmark basis bundle");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const auto& command : commands) {
    if (!app.got_subcommand(command->cmd)) continue;
    try {
      ConfigMap config;
      if (!command->config_path.empty()) config = ConfigMap::from_file(command->config_path);
      command->overrides.apply(config);
      command->run(config);
      return 0;
    } catch (const UsageError& e) {
      std::cerr << "usage error: " << e.what() << "\n";
      return 2;
    } catch (const stmix::Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  std::cerr << "usage error: no subcommand selected\n";
  return 2;
}
