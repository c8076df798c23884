#include "stmix/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stmix/error.hpp"

namespace stmix {

BSplineBasis BSplineBasis::clamped_cubic(double lo, double hi, int n_basis) {
  if (n_basis < kDegree + 1)
    throw ArgumentError("cubic B-spline basis needs at least " + std::to_string(kDegree + 1) +
                        " functions, got " + std::to_string(n_basis));
  if (!(hi > lo)) throw DegeneracyError("spline domain is empty: hi <= lo");
  BSplineBasis basis;
  basis.lo = lo;
  basis.hi = hi;
  basis.n_basis = n_basis;
  basis.knots.resize(static_cast<std::size_t>(n_basis) + kDegree + 1);
  const int n_spans = n_basis - kDegree;  // interior knot count + 1
  for (int i = 0; i <= kDegree; ++i) basis.knots[static_cast<std::size_t>(i)] = lo;
  for (int i = 1; i < n_spans; ++i)
    basis.knots[static_cast<std::size_t>(kDegree + i)] = lo + (hi - lo) * i / n_spans;
  for (int i = 0; i <= kDegree; ++i)
    basis.knots[static_cast<std::size_t>(n_basis + i)] = hi;
  return basis;
}

Eigen::VectorXd BSplineBasis::evaluate(double x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis);
  if (x < lo || x > hi) return out;

  // Knot span index: largest i with knots[i] <= x < knots[i+1]; the right
  // endpoint maps into the last nonempty span.
  int span;
  if (x >= hi) {
    span = n_basis - 1;
  } else {
    span = kDegree;
    while (span + 1 < n_basis && x >= knots[static_cast<std::size_t>(span) + 1]) ++span;
  }

  // Cox-de Boor recursion over the kDegree+1 nonzero functions (de Boor's
  // BSPLVB, backward-stable form).
  std::array<double, kDegree + 1> vals{};
  std::array<double, kDegree + 1> left{}, right{};
  vals[0] = 1.0;
  for (int j = 1; j <= kDegree; ++j) {
    left[static_cast<std::size_t>(j)] = x - knots[static_cast<std::size_t>(span + 1 - j)];
    right[static_cast<std::size_t>(j)] = knots[static_cast<std::size_t>(span + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom =
          right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = vals[static_cast<std::size_t>(r)] / denom;
      vals[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    vals[static_cast<std::size_t>(j)] = saved;
  }
  for (int i = 0; i <= kDegree; ++i) out[span - kDegree + i] = vals[static_cast<std::size_t>(i)];
  return out;
}

Eigen::MatrixXd seasonal_spline_matrix(int weeks_per_year, int n_basis) {
  if (n_basis < 4) throw ArgumentError("seasonal basis needs at least 4 cubic B-splines");
  if (weeks_per_year < n_basis)
    throw ArgumentError("weeks_per_year must be at least the basis size");
  const BSplineBasis basis =
      BSplineBasis::clamped_cubic(1.0, static_cast<double>(weeks_per_year), n_basis);
  Eigen::MatrixXd x1(weeks_per_year, n_basis);
  for (int t2 = 1; t2 <= weeks_per_year; ++t2)
    x1.row(t2 - 1) = basis.evaluate(static_cast<double>(t2)).transpose();
  return x1;
}

SpatialSplineResult spatial_spline_matrix(const Eigen::Ref<const Eigen::MatrixXd>& coords,
                                          const SpatialSplineLayout& layout) {
  if (coords.cols() != 2) throw ShapeError("site coordinates must be N x 2");
  const Eigen::Index n = coords.rows();
  if (n < 1) throw ArgumentError("no sites given");
  if (layout.n_axis1 < 4 || layout.n_axis2 < 4)
    throw ArgumentError("spatial layout needs at least 4 basis functions per axis");
  if (!(layout.prune_mass > 0.0) || layout.prune_mass > 1.0)
    throw ArgumentError("prune_mass must lie in (0, 1]");

  const double theta = layout.rotation_deg * M_PI / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::MatrixXd rot(n, 2);
  rot.col(0) = c * coords.col(0) + s * coords.col(1);
  rot.col(1) = -s * coords.col(0) + c * coords.col(1);

  double lo1, hi1, lo2, hi2;
  if (layout.rect) {
    lo1 = (*layout.rect)[0];
    hi1 = (*layout.rect)[1];
    lo2 = (*layout.rect)[2];
    hi2 = (*layout.rect)[3];
  } else {
    lo1 = rot.col(0).minCoeff();
    hi1 = rot.col(0).maxCoeff();
    lo2 = rot.col(1).minCoeff();
    hi2 = rot.col(1).maxCoeff();
  }
  const double span_floor = 1e-12 * std::max({1.0, std::fabs(hi1), std::fabs(lo1),
                                               std::fabs(hi2), std::fabs(lo2)});
  if (!(hi1 - lo1 > span_floor) || !(hi2 - lo2 > span_floor))
    throw DegeneracyError("sites are collinear along a spline axis; domain has no area");

  const BSplineBasis b1 = BSplineBasis::clamped_cubic(lo1, hi1, layout.n_axis1);
  const BSplineBasis b2 = BSplineBasis::clamped_cubic(lo2, hi2, layout.n_axis2);

  const int p_full = layout.n_axis1 * layout.n_axis2;
  Eigen::MatrixXd full(n, p_full);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd v1 = b1.evaluate(rot(i, 0));
    const Eigen::VectorXd v2 = b2.evaluate(rot(i, 1));
    for (int a = 0; a < layout.n_axis1; ++a)
      for (int b = 0; b < layout.n_axis2; ++b) full(i, a * layout.n_axis2 + b) = v1[a] * v2[b];
  }

  // Greedy column pruning by descending total weight.
  const Eigen::VectorXd weights = full.colwise().sum();
  const double grand_total = weights.sum();
  if (!(grand_total > 0.0))
    throw DegeneracyError("all sites fall outside the spline domain");
  std::vector<int> order(static_cast<std::size_t>(p_full));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return weights[a] > weights[b]; });
  const double target = layout.prune_mass * grand_total * (1.0 - 1e-12);
  std::vector<int> kept;
  double cumulative = 0.0;
  for (int col : order) {
    kept.push_back(col);
    cumulative += weights[col];
    if (cumulative >= target) break;
  }
  std::sort(kept.begin(), kept.end());

  SpatialSplineResult result;
  result.kept_columns = kept;
  result.design.resize(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) result.design.col(static_cast<Eigen::Index>(j)) = full.col(kept[j]);
  return result;
}

}  // namespace stmix
