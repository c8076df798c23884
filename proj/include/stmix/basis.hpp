#pragma once

#include <filesystem>
#include <utility>

#include <Eigen/Dense>

#include "stmix/bspline.hpp"
#include "stmix/ingest.hpp"
#include "stmix/types.hpp"

namespace stmix {

// Orthonormal spatial basis (EOFs of a residual covariance) with the matching
// eigenvalues, positive and non-increasing.
struct SpatialBasis {
  Eigen::MatrixXd eofs;         // H: N x L
  Eigen::VectorXd eigenvalues;  // Delta: length L

  Eigen::Index rank() const { return eofs.cols(); }
};

// Rank selection for leading_eofs: either a fixed count or the relative
// eigenvalue threshold L = argmax{ l : lambda_l >= q * lambda_1 }.
struct EofRule {
  int explicit_count = 0;  // > 0 selects by count
  double threshold = 0.0;  // in (0, 1) selects by relative threshold

  static EofRule count(int l) { return EofRule{l, 0.0}; }
  static EofRule relative(double q) { return EofRule{0, q}; }
};

// Everything the sampler and predictors need about the design: the
// orthonormal covariate design, the seasonal spline design, the spatial
// spline design split against the EOF span, the EOF basis itself, site
// coordinates, and the covariate standardization constants.
struct BasisSet {
  Eigen::MatrixXd x0;      // T1 x 2
  Eigen::MatrixXd x1;      // T2 x P_T
  Eigen::MatrixXd x2_in;   // X2;1 = H H' X2, N x P_S
  Eigen::MatrixXd x2_out;  // X2;2 = X2 - X2;1
  SpatialBasis spatial;
  Eigen::MatrixXd coords;  // N x 2
  CovariateScale cov_scale;

  Eigen::Index n_sites() const { return x2_in.rows(); }
  Eigen::Index n_years() const { return x0.rows(); }
  Eigen::Index weeks_per_year() const { return x1.rows(); }
  Eigen::Index p_seasonal() const { return x1.cols(); }
  Eigen::Index p_spatial() const { return x2_in.cols(); }
  Eigen::Index rank() const { return spatial.rank(); }
  Eigen::Index p() const { return p_seasonal() * p_spatial(); }

  void validate() const;
  void save(const std::filesystem::path& path) const;
  static BasisSet load(const std::filesystem::path& path);
};

// Ordinary least squares on the full Kronecker mean design
// [X0;1 (x) X1 (x) X2 | X0;2 (x) X1 (x) X2], solved through the factored
// normal equations (X0 is orthonormal, so the two covariate blocks decouple).
struct PreliminaryFit {
  Eigen::MatrixXd coeffs_intercept;  // B1: P_S x P_T
  Eigen::MatrixXd coeffs_slope;      // B2: P_S x P_T
  Eigen::MatrixXd fitted;            // N x T
  Eigen::MatrixXd residuals;         // N x T
};

PreliminaryFit preliminary_least_squares(const GriddedDataset& data,
                                         const Eigen::Ref<const Eigen::MatrixXd>& x0,
                                         const Eigen::Ref<const Eigen::MatrixXd>& x1,
                                         const Eigen::Ref<const Eigen::MatrixXd>& x2);

inline Eigen::MatrixXd preliminary_residuals(const GriddedDataset& data,
                                             const Eigen::Ref<const Eigen::MatrixXd>& x0,
                                             const Eigen::Ref<const Eigen::MatrixXd>& x1,
                                             const Eigen::Ref<const Eigen::MatrixXd>& x2) {
  return preliminary_least_squares(data, x0, x1, x2).residuals;
}

// Unbiased sample covariance across columns (divisor T-1).
Eigen::MatrixXd sample_covariance(const Eigen::Ref<const Eigen::MatrixXd>& residuals);

// Top eigenpairs of a symmetric PSD matrix, sign-fixed so each column's
// largest-magnitude entry is positive (ties broken at the lowest index).
SpatialBasis leading_eofs(const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                          const EofRule& rule);

// X2 = X2;1 + X2;2 with X2;1 = H (H' X2); never forms the N x N projector.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> split_projection(
    const Eigen::Ref<const Eigen::MatrixXd>& x2, const Eigen::Ref<const Eigen::MatrixXd>& eofs);

struct BasisOptions {
  int p_seasonal = 12;
  SpatialSplineLayout layout;
  EofRule rule = EofRule::relative(0.01);
};

// Full pipeline: covariate design, seasonal and spatial splines, preliminary
// fit, residual covariance, EOFs, projection split.
BasisSet build_basis_set(const GriddedDataset& data, const CovariateSeries& covariate,
                         const BasisOptions& options);

}  // namespace stmix
