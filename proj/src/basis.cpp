#include "stmix/basis.hpp"

#include <cmath>

#include "stmix/container.hpp"
#include "stmix/error.hpp"

namespace stmix {

void BasisSet::validate() const {
  if (x0.cols() != 2) throw ShapeError("covariate design must have two columns");
  if (x2_in.rows() != x2_out.rows() || x2_in.cols() != x2_out.cols())
    throw ShapeError("projection split blocks disagree in shape");
  if (spatial.eofs.rows() != x2_in.rows())
    throw ShapeError("EOF basis and spatial design disagree on site count");
  if (spatial.eofs.cols() != spatial.eigenvalues.size())
    throw ShapeError("EOF basis and eigenvalues disagree on rank");
  if (coords.rows() != x2_in.rows() || coords.cols() != 2)
    throw ShapeError("coordinate matrix must be n_sites x 2");
}

void BasisSet::save(const std::filesystem::path& path) const {
  validate();
  MatrixBundle bundle;
  bundle.set("x0", x0);
  bundle.set("x1", x1);
  bundle.set("x2_in", x2_in);
  bundle.set("x2_out", x2_out);
  bundle.set("eofs", spatial.eofs);
  bundle.set_vector("eigenvalues", spatial.eigenvalues);
  bundle.set("coords", coords);
  Eigen::VectorXd scale(3);
  scale << cov_scale.mean, cov_scale.scale, static_cast<double>(cov_scale.n_years);
  bundle.set_vector("cov_scale", scale);
  bundle.save(path);
}

BasisSet BasisSet::load(const std::filesystem::path& path) {
  const MatrixBundle bundle = MatrixBundle::load(path);
  BasisSet basis;
  basis.x0 = bundle.at("x0");
  basis.x1 = bundle.at("x1");
  basis.x2_in = bundle.at("x2_in");
  basis.x2_out = bundle.at("x2_out");
  basis.spatial.eofs = bundle.at("eofs");
  basis.spatial.eigenvalues = bundle.vector("eigenvalues");
  basis.coords = bundle.at("coords");
  const Eigen::VectorXd scale = bundle.vector("cov_scale");
  basis.cov_scale.mean = scale[0];
  basis.cov_scale.scale = scale[1];
  basis.cov_scale.n_years = static_cast<int>(scale[2]);
  basis.validate();
  return basis;
}

PreliminaryFit preliminary_least_squares(const GriddedDataset& data,
                                         const Eigen::Ref<const Eigen::MatrixXd>& x0,
                                         const Eigen::Ref<const Eigen::MatrixXd>& x1,
                                         const Eigen::Ref<const Eigen::MatrixXd>& x2) {
  data.validate();
  const Eigen::Index n = data.n_sites();
  const Eigen::Index t_total = data.n_weeks();
  const Eigen::Index t1 = x0.rows();
  const Eigen::Index t2 = x1.rows();
  if (x0.cols() != 2) throw ShapeError("covariate design must have two columns");
  if (t1 != data.n_years || t2 != data.weeks_per_year)
    throw ShapeError("design matrices inconsistent with the dataset calendar");
  if (x2.rows() != n) throw ShapeError("spatial design row count differs from site count");

  const Eigen::Index p_t = x1.cols();
  const Eigen::Index p_s = x2.cols();

  // Gram matrices of the small factors; X0'X0 = I by construction.
  const Eigen::MatrixXd gram_x1 = x1.transpose() * x1;
  const Eigen::MatrixXd gram_x2 = x2.transpose() * x2;
  Eigen::FullPivLU<Eigen::MatrixXd> lu_x1(gram_x1);
  if (!lu_x1.isInvertible()) throw SingularityError("X1 Gram matrix is singular");
  Eigen::FullPivLU<Eigen::MatrixXd> lu_x2(gram_x2);
  if (!lu_x2.isInvertible()) throw SingularityError("X2 Gram matrix is singular");

  // Projected data G = X2' Y (P_S x T), then per covariate block i the
  // cross-product matrix M_i = sum_t x0(t1,i) * G_t * x1_row(t2).
  const Eigen::MatrixXd projected = x2.transpose() * data.values;
  const TimeIndex idx = data.time();
  PreliminaryFit fit;
  Eigen::MatrixXd cross[2] = {Eigen::MatrixXd::Zero(p_s, p_t), Eigen::MatrixXd::Zero(p_s, p_t)};
  for (Eigen::Index t = 1; t <= t_total; ++t) {
    const int y = idx.year_of(static_cast<int>(t));
    const int w = idx.week_of(static_cast<int>(t));
    for (int i = 0; i < 2; ++i)
      cross[i].noalias() += x0(y - 1, i) * projected.col(t - 1) * x1.row(w - 1);
  }

  // Normal equations factor over the Kronecker structure:
  // (X1'X1 (x) X2'X2) vec(B_i) = vec(M_i)  =>  B_i = (X2'X2)^-1 M_i (X1'X1)^-1.
  fit.coeffs_intercept = lu_x2.solve(cross[0]) * lu_x1.inverse();
  fit.coeffs_slope = lu_x2.solve(cross[1]) * lu_x1.inverse();

  // Fitted values mu_t = sum_i x0(t1,i) * X2 B_i x1_row(t2)'.
  const Eigen::MatrixXd map_intercept = x2 * fit.coeffs_intercept;  // N x P_T
  const Eigen::MatrixXd map_slope = x2 * fit.coeffs_slope;
  fit.fitted.resize(n, t_total);
  for (Eigen::Index t = 1; t <= t_total; ++t) {
    const int y = idx.year_of(static_cast<int>(t));
    const int w = idx.week_of(static_cast<int>(t));
    fit.fitted.col(t - 1) = x0(y - 1, 0) * (map_intercept * x1.row(w - 1).transpose()) +
                            x0(y - 1, 1) * (map_slope * x1.row(w - 1).transpose());
  }
  fit.residuals = data.values - fit.fitted;
  return fit;
}

Eigen::MatrixXd sample_covariance(const Eigen::Ref<const Eigen::MatrixXd>& residuals) {
  const Eigen::Index t = residuals.cols();
  if (t < 2) throw ArgumentError("sample covariance requires at least two columns");
  const Eigen::VectorXd mean = residuals.rowwise().mean();
  const Eigen::MatrixXd centered = residuals.colwise() - mean;
  Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(t - 1);
  return 0.5 * (cov + cov.transpose()).eval();
}

SpatialBasis leading_eofs(const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                          const EofRule& rule) {
  const Eigen::Index n = covariance.rows();
  if (covariance.cols() != n) throw ShapeError("covariance matrix must be square");
  const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if (asym > 1e-10 * scale) throw ArgumentError("covariance matrix is not symmetric");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success)
    throw NumericError("eigendecomposition of the covariance failed");
  // Eigen orders ascending; view descending.
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  if (!(values[0] > 0.0))
    throw DegeneracyError("covariance has no positive eigenvalue");

  Eigen::Index l;
  if (rule.explicit_count > 0) {
    l = rule.explicit_count;
    if (l > n) throw ArgumentError("requested more EOFs than sites");
    if (!(values[l - 1] > 0.0))
      throw DegeneracyError("requested EOF count reaches non-positive eigenvalues");
  } else {
    if (!(rule.threshold > 0.0) || rule.threshold >= 1.0)
      throw ArgumentError("EOF threshold must lie in (0, 1)");
    l = 1;
    while (l < n && values[l] >= rule.threshold * values[0]) ++l;
  }

  SpatialBasis basis;
  basis.eigenvalues = values.head(l);
  basis.eofs.resize(n, l);
  for (Eigen::Index j = 0; j < l; ++j) {
    Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - j);
    // Sign convention: the largest-magnitude entry is positive; ties break at
    // the lowest index.
    Eigen::Index arg = 0;
    double best = std::fabs(v[0]);
    for (Eigen::Index i = 1; i < n; ++i) {
      if (std::fabs(v[i]) > best) {
        best = std::fabs(v[i]);
        arg = i;
      }
    }
    if (v[arg] < 0.0) v = -v;
    basis.eofs.col(j) = v;
  }
  return basis;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> split_projection(
    const Eigen::Ref<const Eigen::MatrixXd>& x2, const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  if (x2.rows() != eofs.rows())
    throw ArgumentError("spatial design and EOF basis disagree on site count");
  // Two thin products; the N x N projector is never formed.
  const Eigen::MatrixXd proj = eofs.transpose() * x2;  // L x P_S
  Eigen::MatrixXd in_span = eofs * proj;
  Eigen::MatrixXd out_span = x2 - in_span;
  return {std::move(in_span), std::move(out_span)};
}

BasisSet build_basis_set(const GriddedDataset& data, const CovariateSeries& covariate,
                         const BasisOptions& options) {
  data.validate();
  BasisSet basis;
  basis.x0 = standardize_covariate(covariate, data.n_years);
  basis.cov_scale = covariate_scale(covariate, data.n_years);
  basis.x1 = seasonal_spline_matrix(data.weeks_per_year, options.p_seasonal);
  const SpatialSplineResult spatial = spatial_spline_matrix(data.coords, options.layout);
  const PreliminaryFit fit = preliminary_least_squares(data, basis.x0, basis.x1, spatial.design);
  const Eigen::MatrixXd cov = sample_covariance(fit.residuals);
  basis.spatial = leading_eofs(cov, options.rule);
  std::tie(basis.x2_in, basis.x2_out) = split_projection(spatial.design, basis.spatial.eofs);
  basis.coords = data.coords;
  basis.validate();
  return basis;
}

}  // namespace stmix
