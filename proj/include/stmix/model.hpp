#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stmix/basis.hpp"
#include "stmix/rng.hpp"
#include "stmix/types.hpp"

namespace stmix {

// Discrete grid of degrees-of-freedom values, held in tenths so membership
// tests are exact.
struct DfGrid {
  int min_tenths = 21;
  int max_tenths = 400;
  int step_tenths = 1;

  int size() const { return (max_tenths - min_tenths) / step_tenths + 1; }
  double value(int i) const { return 0.1 * (min_tenths + i * step_tenths); }
  bool contains(double a) const;
  double max_value() const { return 0.1 * max_tenths; }

  static DfGrid paper_default() { return DfGrid{21, 400, 1}; }
  static DfGrid single(double a);
};

// Parameters of one mixture component: L x L dispersion of the random
// effects, nugget variance, degrees of freedom.
struct ClusterParams {
  Eigen::MatrixXd dispersion;  // Phi
  double nugget2 = 0.1;        // tau^2
  double df = 40.0;            // a, must sit on the grid and exceed 2

  void validate(const DfGrid& grid) const;
};

// Truncated stick-breaking weights. The last stick is fixed at one, so the
// weights sum to one exactly with the final weight taken as the residual.
// log(1 - V_k) is carried alongside V_k because the concentration conditional
// needs it exactly; near V = 1 the double representation of V loses it.
struct MixtureWeights {
  Eigen::VectorXd pi;
  Eigen::VectorXd sticks;       // V, sticks[K-1] == 1
  Eigen::VectorXd log1m_sticks; // log(1 - V_k); last entry -inf by convention
  double concentration = 1.0;

  // log1m_sticks when populated, otherwise log1p(-V) recomputed from sticks.
  Eigen::VectorXd effective_log1m() const;
};

Eigen::VectorXd stick_breaking(const Eigen::Ref<const Eigen::VectorXd>& sticks);
Eigen::VectorXd sticks_from_weights(const Eigen::Ref<const Eigen::VectorXd>& pi);

// The four fixed-effect blocks beta[i][j] (i: intercept/slope, j: in-span /
// out-of-span) with their normal/inverse-gamma hyperparameters.
struct MeanCoefficients {
  std::array<std::array<Eigen::VectorXd, 2>, 2> beta;
  std::array<std::array<double, 2>, 2> mu_hyper{{{0.0, 0.0}, {0.0, 0.0}}};
  std::array<std::array<double, 2>, 2> sigma2_hyper{{{1.0, 1.0}, {1.0, 1.0}}};

  static MeanCoefficients zeros(Eigen::Index p);
};

// Per-time latent state: cluster label, scale, scaled random effects
// W_t = sigma_t * Z_t.
struct LatentState {
  std::vector<int> labels;   // 0-based, length T
  Eigen::VectorXd scale2;    // sigma_t^2
  Eigen::MatrixXd effects;   // W: L x T
};

// --- mean structure ---------------------------------------------------------

// Mean field at a (possibly future) flat week index t, evaluated through the
// factored Kronecker blocks. Throws CoverageError when the year of t is not
// covered by the covariate series.
Eigen::VectorXd mean_surface(const MeanCoefficients& coeffs, const BasisSet& basis,
                             const CovariateSeries& covariate, int t);

// Same, with the covariate row supplied directly (used for averaged
// covariates in return levels).
Eigen::VectorXd mean_surface_at(const MeanCoefficients& coeffs, const BasisSet& basis,
                                const Eigen::Vector2d& x0_row, int week);

// Mean matrix over the fit window (N x T1*T2).
Eigen::MatrixXd mean_matrix(const MeanCoefficients& coeffs, const BasisSet& basis);

// --- densities and derived quantities ---------------------------------------

// Log-density of the zero-location N-variate Student-t with dispersion
// ((a-2)/a) (H Phi H' + tau^2 I) and df a, evaluated in O(N L^2) through the
// Woodbury identity and the matrix determinant lemma (valid because H has
// orthonormal columns).
double lowrank_t_logdensity(const Eigen::Ref<const Eigen::VectorXd>& eps,
                            const ClusterParams& theta,
                            const Eigen::Ref<const Eigen::MatrixXd>& eofs);

// log sum_k pi_k f_T(eps; Theta_k), log-sum-exp stabilized.
double dpm_logdensity(const Eigen::Ref<const Eigen::VectorXd>& eps,
                      const std::vector<ClusterParams>& clusters,
                      const Eigen::Ref<const Eigen::VectorXd>& pi,
                      const Eigen::Ref<const Eigen::MatrixXd>& eofs);

// Site marginal of the mixture: scale of component k at site n.
double marginal_scale(int site, const ClusterParams& theta,
                      const Eigen::Ref<const Eigen::MatrixXd>& eofs);

double marginal_mixture_cdf(int site, double x, const std::vector<ClusterParams>& clusters,
                            const Eigen::Ref<const Eigen::VectorXd>& pi,
                            const Eigen::Ref<const Eigen::MatrixXd>& eofs);

// Inverse of the site marginal CDF by monotone bisection, to 1e-10 in x.
double marginal_mixture_quantile(int site, double p, const std::vector<ClusterParams>& clusters,
                                 const Eigen::Ref<const Eigen::VectorXd>& pi,
                                 const Eigen::Ref<const Eigen::MatrixXd>& eofs);

// Tail dependence coefficient between two sites; driven by the
// heaviest-tailed component (smallest df, ties at the lowest index).
double chi_coefficient(int site1, int site2, const std::vector<ClusterParams>& clusters,
                       const Eigen::Ref<const Eigen::VectorXd>& pi,
                       const Eigen::Ref<const Eigen::MatrixXd>& eofs);

// Model covariance sum_k pi_k (h_n1 Phi_k h_n2' + tau_k^2 1{n1=n2}).
double model_covariance(int site1, int site2, const std::vector<ClusterParams>& clusters,
                        const Eigen::Ref<const Eigen::VectorXd>& pi,
                        const Eigen::Ref<const Eigen::MatrixXd>& eofs);

// --- synthetic data ----------------------------------------------------------

// Draw a full dataset from the generative model. T must be a whole number of
// years within the basis fit window. Returns the dataset and the latent truth.
std::pair<GriddedDataset, LatentState> generate_synthetic(
    const MeanCoefficients& coeffs, const std::vector<ClusterParams>& clusters,
    const Eigen::Ref<const Eigen::VectorXd>& pi, const BasisSet& basis, int n_weeks,
    std::uint64_t seed);

// One residual field draw given fixed parameters (shared by the generator and
// the posterior predictive path).
Eigen::VectorXd draw_residual_field(const std::vector<ClusterParams>& clusters,
                                    const Eigen::Ref<const Eigen::VectorXd>& pi,
                                    const Eigen::Ref<const Eigen::MatrixXd>& eofs, Rng& rng,
                                    int* label_out = nullptr, double* scale2_out = nullptr,
                                    Eigen::VectorXd* effects_out = nullptr);

// --- parameter bundle I/O ----------------------------------------------------

struct ModelParameters {
  MeanCoefficients coeffs;
  std::vector<ClusterParams> clusters;
  MixtureWeights weights;
};

void save_parameters(const ModelParameters& params, const std::filesystem::path& path);
ModelParameters load_parameters(const std::filesystem::path& path);

// Cholesky factor of a symmetric PSD matrix; tolerates zero (or numerically
// tiny negative) eigenvalues, unlike a strict LLT.
Eigen::MatrixXd psd_factor(const Eigen::Ref<const Eigen::MatrixXd>& m);

}  // namespace stmix
