#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace stmix {

// Clamped cubic B-spline basis over [lo, hi] with equidistant interior knots
// and boundary knots of multiplicity degree+1, so the first/last basis
// functions interpolate the endpoints. Basis values at any point inside the
// domain sum to one.
struct BSplineBasis {
  static constexpr int kDegree = 3;

  double lo = 0.0;
  double hi = 1.0;
  int n_basis = 0;
  std::vector<double> knots;  // n_basis + degree + 1 entries

  static BSplineBasis clamped_cubic(double lo, double hi, int n_basis);

  // All n_basis values at x; zero outside [lo, hi].
  Eigen::VectorXd evaluate(double x) const;
};

// T2 x P_T design of cubic B-splines over [1, weeks_per_year] evaluated at the
// integer weeks.
Eigen::MatrixXd seasonal_spline_matrix(int weeks_per_year, int n_basis);

// Tensor-product layout for the spatial design. The two 1-D bases run along a
// rotated pair of axes (rotation 0 keeps longitude/latitude). When `rect` is
// unset the domain is the bounding rectangle of the rotated sites.
struct SpatialSplineLayout {
  int n_axis1 = 30;
  int n_axis2 = 10;
  double rotation_deg = 0.0;
  double prune_mass = 0.99;
  std::optional<std::array<double, 4>> rect;  // {lo1, hi1, lo2, hi2} in rotated coords
};

struct SpatialSplineResult {
  Eigen::MatrixXd design;         // N x P_S, retained tensor columns
  std::vector<int> kept_columns;  // indices into the full n_axis1*n_axis2 tensor
};

// Tensor products of the two 1-D cubic bases at every site; columns kept
// greedily by descending total weight (column sums) until at least
// `prune_mass` of the grand total is retained.
SpatialSplineResult spatial_spline_matrix(const Eigen::Ref<const Eigen::MatrixXd>& coords,
                                          const SpatialSplineLayout& layout);

}  // namespace stmix
