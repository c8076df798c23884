#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stmix/basis.hpp"
#include "stmix/model.hpp"
#include "stmix/rng.hpp"
#include "stmix/types.hpp"

namespace stmix {

// Prior constants. Defaults follow the hierarchical model's reference
// configuration: diffuse normal/inverse-gamma pairs on the mean block
// (flatter for intercept-related terms than for slope-related ones), an
// Inverse-Gamma(1,1) nugget prior with mass near zero, and a Gamma(0.1, 0.1)
// hyperprior on the stick-breaking concentration.
struct Hyperparameters {
  double s2_intercept = 1e4;  // Var(mu_{1;j}), i.e. s_{1;j} = 10^2
  double s2_slope = 1e2;      // Var(mu_{2;j}), i.e. s_{2;j} = 10
  double shape_intercept = 0.01, rate_intercept = 0.01;  // sigma2_{1;j}
  double shape_slope = 0.1, rate_slope = 0.1;            // sigma2_{2;j}
  double nugget_shape = 1.0, nugget_rate = 1.0;          // tau2_k
  double concentration_shape = 0.1, concentration_rate = 0.1;  // delta

  double s2(int i) const { return i == 0 ? s2_intercept : s2_slope; }
  double shape(int i) const { return i == 0 ? shape_intercept : shape_slope; }
  double rate(int i) const { return i == 0 ? rate_intercept : rate_slope; }
};

struct McmcConfig {
  int n_iter = 60000;
  int burn_in = 10000;
  int thin = 5;
  int n_components = 10;  // K
  DfGrid df_grid = DfGrid::paper_default();
  Hyperparameters hyper;
  std::uint64_t seed = 1;

  int retained() const { return (n_iter - burn_in) / thin; }
  void validate() const;
};

// One retained draw of everything downstream computations need, plus
// latent-state summaries.
struct Draw {
  MeanCoefficients coeffs;
  std::vector<ClusterParams> clusters;
  MixtureWeights weights;
  double log_post = 0.0;
  Eigen::VectorXi counts;     // cluster occupancy m_k
  double scale2_mean = 0.0;   // mean_t sigma2_t
};

struct PosteriorSamples {
  McmcConfig config;
  std::vector<Draw> draws;
  double elapsed_seconds = 0.0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(draws.size()); }
  // Chunked binary store: manifest.json plus one bundle per 1000 draws.
  void save(const std::filesystem::path& dir) const;
  static PosteriorSamples load(const std::filesystem::path& dir);
};

// Gibbs sampler over the full hierarchical model. Every block update is a
// closed-form conjugate draw; the degrees of freedom are sampled over the
// discrete grid. Blocks are public so tests can exercise one conditional with
// the rest of the state frozen.
class GibbsSampler {
 public:
  GibbsSampler(const GriddedDataset& data, const BasisSet& basis, const McmcConfig& config);

  // Overdispersed-but-sane start: beta from the preliminary least-squares
  // fit, uniform random labels, unit scales, W projected from residuals,
  // dispersions at their prior mean.
  void initialize();

  // Replace the observation matrix (dimensions must match); used when the
  // sampler drives synthetic-data checks.
  void set_data(const Eigen::MatrixXd& values);
  const Eigen::MatrixXd& data() const { return y_; }

  void sweep();

  void update_beta();
  void update_mean_hypers();
  void update_labels();
  void update_scales_effects();  // sigma2_t and W_t, per time point
  void update_dispersions();     // Phi_k
  void update_nuggets();         // tau2_k
  void update_df();              // a_k over the grid
  void update_sticks();
  void update_concentration();

  double log_posterior() const;
  Draw snapshot() const;

  // State access for tests and for prior-calibration harnesses.
  MeanCoefficients& coeffs() { return coeffs_; }
  std::vector<ClusterParams>& clusters() { return clusters_; }
  MixtureWeights& weights() { return weights_; }
  LatentState& latent() { return latent_; }
  Rng& rng() { return rng_; }
  const Eigen::MatrixXd& mean() const { return mu_; }
  const BasisSet& basis() const { return basis_; }
  const McmcConfig& config() const { return config_; }
  void refresh_mean();

  // Joint prior simulation and the matching data draw; together with sweep()
  // these form the two legs of a prior-invariance (getting-it-right) check.
  void draw_state_from_prior();
  Eigen::MatrixXd draw_data();

  int iteration() const { return iteration_; }

 private:
  void run_block(const char* name, void (GibbsSampler::*block)());
  Eigen::VectorXd cluster_counts() const;

  const BasisSet& basis_;
  McmcConfig config_;
  Eigen::MatrixXd y_;          // N x T observations
  Eigen::MatrixXd gy_[2];      // X2;j' Y
  Eigen::MatrixXd mh_[2];      // X2;j' H
  Eigen::MatrixXd ug_[2];      // eigenvectors of X2;j' X2;j
  Eigen::VectorXd lamg_[2];    // eigenvalues, clamped at zero
  std::vector<int> year_of_, week_of_;
  Eigen::VectorXd grid_const_;  // per grid point: (a/2)log(a/2-1) - lgamma(a/2)
  Eigen::MatrixXd delta_prior_; // diag(Delta), Inverse-Wishart prior scale

  MeanCoefficients coeffs_;
  std::vector<ClusterParams> clusters_;
  MixtureWeights weights_;
  LatentState latent_;
  Eigen::MatrixXd mu_;  // cached mean matrix

  Rng rng_;
  int iteration_ = 0;
};

PosteriorSamples gibbs_fit(const GriddedDataset& data, const BasisSet& basis,
                           const McmcConfig& config);

// Named scalar traces over the retained draws (inputs to diagnostics).
std::vector<std::pair<std::string, Eigen::VectorXd>> scalar_traces(
    const PosteriorSamples& samples);

}  // namespace stmix
