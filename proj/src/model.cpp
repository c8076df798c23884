#include "stmix/model.hpp"

#include <cmath>
#include <limits>

#include "stmix/container.hpp"
#include "stmix/error.hpp"
#include "stmix/special.hpp"

namespace stmix {

namespace {

// Nugget variances are clamped away from zero inside density evaluation; the
// Woodbury form divides by tau^2.
constexpr double kNuggetFloor = 1e-12;

}  // namespace

bool DfGrid::contains(double a) const {
  const double scaled = a * 10.0;
  const int tenths = static_cast<int>(std::lround(scaled));
  if (std::fabs(scaled - tenths) > 1e-9) return false;
  if (tenths < min_tenths || tenths > max_tenths) return false;
  return (tenths - min_tenths) % step_tenths == 0;
}

DfGrid DfGrid::single(double a) {
  const int tenths = static_cast<int>(std::lround(a * 10.0));
  if (std::fabs(a * 10.0 - tenths) > 1e-9)
    throw ArgumentError("df grid values must be multiples of 0.1");
  return DfGrid{tenths, tenths, 1};
}

void ClusterParams::validate(const DfGrid& grid) const {
  if (dispersion.rows() != dispersion.cols())
    throw ShapeError("cluster dispersion must be square");
  Eigen::LLT<Eigen::MatrixXd> llt(dispersion);
  if (llt.info() != Eigen::Success)
    throw NumericError("cluster dispersion is not positive definite");
  if (!(nugget2 > 0.0)) throw ArgumentError("cluster nugget variance must be positive");
  if (!(df > 2.0)) throw ArgumentError("cluster df must exceed 2");
  if (!grid.contains(df)) throw ArgumentError("cluster df is off the grid");
}

Eigen::VectorXd stick_breaking(const Eigen::Ref<const Eigen::VectorXd>& sticks) {
  const Eigen::Index k = sticks.size();
  if (k < 1) throw ArgumentError("stick vector is empty");
  if (sticks[k - 1] != 1.0) throw ArgumentError("last stick must equal 1 exactly");
  for (Eigen::Index i = 0; i < k; ++i)
    if (sticks[i] < 0.0 || sticks[i] > 1.0)
      throw ArgumentError("stick values must lie in [0, 1]");
  Eigen::VectorXd pi(k);
  double remaining = 1.0;
  for (Eigen::Index i = 0; i + 1 < k; ++i) {
    pi[i] = sticks[i] * remaining;
    remaining *= 1.0 - sticks[i];
  }
  // Last weight as the exact residual, adjusted so the float sum is 1.
  pi[k - 1] = 1.0 - pi.head(k - 1).sum();
  if (pi[k - 1] < 0.0) pi[k - 1] = 0.0;
  for (int pass = 0; pass < 2 && pi.sum() != 1.0; ++pass) pi[k - 1] += 1.0 - pi.sum();
  return pi;
}

Eigen::VectorXd MixtureWeights::effective_log1m() const {
  if (log1m_sticks.size() == sticks.size()) return log1m_sticks;
  Eigen::VectorXd out(sticks.size());
  for (Eigen::Index i = 0; i < sticks.size(); ++i)
    out[i] = sticks[i] < 1.0 ? std::log1p(-sticks[i])
                             : -std::numeric_limits<double>::infinity();
  return out;
}

Eigen::VectorXd sticks_from_weights(const Eigen::Ref<const Eigen::VectorXd>& pi) {
  const Eigen::Index k = pi.size();
  Eigen::VectorXd sticks(k);
  double remaining = 1.0;
  for (Eigen::Index i = 0; i + 1 < k; ++i) {
    sticks[i] = remaining > 0.0 ? pi[i] / remaining : 0.0;
    remaining -= pi[i];
  }
  sticks[k - 1] = 1.0;
  return sticks;
}

MeanCoefficients MeanCoefficients::zeros(Eigen::Index p) {
  MeanCoefficients out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.beta[i][j] = Eigen::VectorXd::Zero(p);
  return out;
}

namespace {

// Coefficient vectors are ordered seasonal-major: entry index p2 + p1 * P_S.
// Reshaped to P_S x P_T, column p1 holds the spatial coefficients of seasonal
// basis p1, so mu contributions evaluate as X2;j * B * x1_row'.
Eigen::Map<const Eigen::MatrixXd> as_block(const Eigen::VectorXd& beta, Eigen::Index p_s,
                                           Eigen::Index p_t) {
  if (beta.size() != p_s * p_t) throw ShapeError("coefficient vector has wrong length");
  return Eigen::Map<const Eigen::MatrixXd>(beta.data(), p_s, p_t);
}

}  // namespace

Eigen::VectorXd mean_surface_at(const MeanCoefficients& coeffs, const BasisSet& basis,
                                const Eigen::Vector2d& x0_row, int week) {
  if (week < 1 || week > basis.weeks_per_year())
    throw ArgumentError("week index outside the seasonal design");
  const Eigen::Index p_s = basis.p_spatial();
  const Eigen::Index p_t = basis.p_seasonal();
  const Eigen::VectorXd x1_row = basis.x1.row(week - 1).transpose();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(basis.n_sites());
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const auto block = as_block(coeffs.beta[i][j], p_s, p_t);
      const Eigen::MatrixXd& x2j = (j == 0) ? basis.x2_in : basis.x2_out;
      mu.noalias() += x0_row[i] * (x2j * (block * x1_row));
    }
  }
  return mu;
}

Eigen::VectorXd mean_surface(const MeanCoefficients& coeffs, const BasisSet& basis,
                             const CovariateSeries& covariate, int t) {
  if (t < 1) throw ArgumentError("time index must be positive");
  const TimeIndex idx{static_cast<int>(basis.weeks_per_year())};
  const int year = idx.year_of(t);
  const int week = idx.week_of(t);
  const Eigen::Vector2d x0_row = basis.cov_scale.row(covariate, year);
  return mean_surface_at(coeffs, basis, x0_row, week);
}

Eigen::MatrixXd mean_matrix(const MeanCoefficients& coeffs, const BasisSet& basis) {
  const Eigen::Index t1 = basis.n_years();
  const Eigen::Index t2 = basis.weeks_per_year();
  const Eigen::Index p_s = basis.p_spatial();
  const Eigen::Index p_t = basis.p_seasonal();
  // Cache the N x P_T site maps of each block once.
  Eigen::MatrixXd maps[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      maps[i][j] = ((j == 0) ? basis.x2_in : basis.x2_out) * as_block(coeffs.beta[i][j], p_s, p_t);
  Eigen::MatrixXd mu(basis.n_sites(), t1 * t2);
  for (Eigen::Index y = 0; y < t1; ++y) {
    for (Eigen::Index w = 0; w < t2; ++w) {
      const Eigen::VectorXd x1_row = basis.x1.row(w).transpose();
      Eigen::VectorXd col = Eigen::VectorXd::Zero(basis.n_sites());
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) col.noalias() += basis.x0(y, i) * (maps[i][j] * x1_row);
      mu.col(y * t2 + w) = col;
    }
  }
  return mu;
}

double lowrank_t_logdensity(const Eigen::Ref<const Eigen::VectorXd>& eps,
                            const ClusterParams& theta,
                            const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  const Eigen::Index n = eps.size();
  const Eigen::Index l = eofs.cols();
  if (eofs.rows() != n) throw ShapeError("EOF basis and residual vector disagree on size");
  // The O(N L^2) evaluation leans on H'H = I; reject bases that break it.
  if (l > 0) {
    const Eigen::MatrixXd gram = eofs.transpose() * eofs;
    if ((gram - Eigen::MatrixXd::Identity(l, l)).cwiseAbs().maxCoeff() > 1e-8)
      throw ArgumentError("EOF basis does not have orthonormal columns");
  }
  const double a = theta.df;
  if (!(a > 2.0)) throw ArgumentError("df must exceed 2");
  const double tau2 = std::max(theta.nugget2, kNuggetFloor);
  const double c = (a - 2.0) / a;  // dispersion = c * (H Phi H' + tau^2 I)

  // Quadratic form and determinant of (tau^2 I + H Phi H') in O(N L^2):
  //   inverse = (I - H (tau^2 Phi^-1 + I)^-1 H') / tau^2
  //   det     = tau^(2(N-L)) det(tau^2 I_L + Phi).
  double quad0;
  double logdet0;
  if (l == 0) {
    quad0 = eps.squaredNorm() / tau2;
    logdet0 = n * std::log(tau2);
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt_phi(theta.dispersion);
    if (llt_phi.info() != Eigen::Success)
      throw NumericError("cluster dispersion is not positive definite");
    Eigen::MatrixXd inner =
        tau2 * llt_phi.solve(Eigen::MatrixXd::Identity(l, l)) + Eigen::MatrixXd::Identity(l, l);
    inner = 0.5 * (inner + inner.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> llt_inner(inner);
    if (llt_inner.info() != Eigen::Success)
      throw NumericError("Woodbury inner matrix is not positive definite");
    const Eigen::VectorXd w = eofs.transpose() * eps;
    quad0 = (eps.squaredNorm() - w.dot(llt_inner.solve(w))) / tau2;

    Eigen::MatrixXd shifted = theta.dispersion;
    shifted.diagonal().array() += tau2;
    Eigen::LLT<Eigen::MatrixXd> llt_shifted(shifted);
    if (llt_shifted.info() != Eigen::Success)
      throw NumericError("determinant lemma matrix is not positive definite");
    logdet0 = (n - l) * std::log(tau2);
    for (Eigen::Index i = 0; i < l; ++i)
      logdet0 += 2.0 * std::log(llt_shifted.matrixL()(i, i));
  }

  const double quad = quad0 / c;
  const double logdet = n * std::log(c) + logdet0;
  return std::lgamma(0.5 * (a + n)) - std::lgamma(0.5 * a) - 0.5 * n * std::log(a * M_PI) -
         0.5 * logdet - 0.5 * (a + n) * std::log1p(quad / a);
}

double dpm_logdensity(const Eigen::Ref<const Eigen::VectorXd>& eps,
                      const std::vector<ClusterParams>& clusters,
                      const Eigen::Ref<const Eigen::VectorXd>& pi,
                      const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  const Eigen::Index k = static_cast<Eigen::Index>(clusters.size());
  if (pi.size() != k) throw ShapeError("weights and clusters disagree on component count");
  Eigen::VectorXd logs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (pi[i] <= 0.0) {
      logs[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    logs[i] = std::log(pi[i]) + lowrank_t_logdensity(eps, clusters[static_cast<std::size_t>(i)], eofs);
  }
  const double m = logs.maxCoeff();
  if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
  return m + std::log((logs.array() - m).exp().sum());
}

double marginal_scale(int site, const ClusterParams& theta,
                      const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  const Eigen::VectorXd h = eofs.row(site).transpose();
  const double tau2 = std::max(theta.nugget2, kNuggetFloor);
  const double disp = h.dot(theta.dispersion * h) + tau2;
  return std::sqrt((theta.df - 2.0) / theta.df * disp);
}

double marginal_mixture_cdf(int site, double x, const std::vector<ClusterParams>& clusters,
                            const Eigen::Ref<const Eigen::VectorXd>& pi,
                            const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  if (site < 0 || site >= eofs.rows()) throw ArgumentError("site index out of range");
  double cdf = 0.0;
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    if (pi[static_cast<Eigen::Index>(k)] <= 0.0) continue;
    const double scale = marginal_scale(site, clusters[k], eofs);
    cdf += pi[static_cast<Eigen::Index>(k)] * student_t_cdf(x / scale, clusters[k].df);
  }
  return cdf;
}

double marginal_mixture_quantile(int site, double p, const std::vector<ClusterParams>& clusters,
                                 const Eigen::Ref<const Eigen::VectorXd>& pi,
                                 const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  if (!(p > 0.0) || !(p < 1.0)) throw ArgumentError("quantile level must lie in (0, 1)");
  // Bracket, then bisect; the mixture CDF is strictly increasing.
  double lo = -1.0, hi = 1.0;
  while (marginal_mixture_cdf(site, hi, clusters, pi, eofs) < p) {
    hi *= 2.0;
    if (hi > 1e300) throw NumericError("quantile bracket expansion failed");
  }
  while (marginal_mixture_cdf(site, lo, clusters, pi, eofs) > p) {
    lo *= 2.0;
    if (lo < -1e300) throw NumericError("quantile bracket expansion failed");
  }
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (marginal_mixture_cdf(site, mid, clusters, pi, eofs) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double chi_coefficient(int site1, int site2, const std::vector<ClusterParams>& clusters,
                       const Eigen::Ref<const Eigen::VectorXd>& pi,
                       const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  if (site1 == site2) throw ArgumentError("tail dependence needs two distinct sites");
  if (clusters.empty()) throw ArgumentError("no mixture components");
  (void)pi;  // the tail is owned by the heaviest component regardless of weight
  std::size_t m = 0;
  for (std::size_t k = 1; k < clusters.size(); ++k)
    if (clusters[k].df < clusters[m].df) m = k;
  const ClusterParams& heavy = clusters[m];
  const double tau2 = std::max(heavy.nugget2, kNuggetFloor);
  const Eigen::VectorXd h1 = eofs.row(site1).transpose();
  const Eigen::VectorXd h2 = eofs.row(site2).transpose();
  const double cross = h1.dot(heavy.dispersion * h2);
  const double v1 = h1.dot(heavy.dispersion * h1) + tau2;
  const double v2 = h2.dot(heavy.dispersion * h2) + tau2;
  const double r = cross / std::sqrt(v1 * v2);
  const double a = heavy.df;
  const double arg = std::sqrt((a + 1.0) * (1.0 - r) / (1.0 + r));
  return 2.0 * student_t_survival(arg, a + 1.0);
}

double model_covariance(int site1, int site2, const std::vector<ClusterParams>& clusters,
                        const Eigen::Ref<const Eigen::VectorXd>& pi,
                        const Eigen::Ref<const Eigen::MatrixXd>& eofs) {
  const Eigen::VectorXd h1 = eofs.row(site1).transpose();
  const Eigen::VectorXd h2 = eofs.row(site2).transpose();
  double cov = 0.0;
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    double term = h1.dot(clusters[k].dispersion * h2);
    if (site1 == site2) term += clusters[k].nugget2;
    cov += pi[static_cast<Eigen::Index>(k)] * term;
  }
  return cov;
}

Eigen::MatrixXd psd_factor(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw NumericError("PSD factorization failed");
  const double tol = 1e-12 * std::max(1.0, solver.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd values = solver.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < -tol) throw NumericError("matrix is indefinite, not PSD");
    values[i] = std::max(values[i], 0.0);
  }
  return solver.eigenvectors() * values.cwiseSqrt().asDiagonal();
}

Eigen::VectorXd draw_residual_field(const std::vector<ClusterParams>& clusters,
                                    const Eigen::Ref<const Eigen::VectorXd>& pi,
                                    const Eigen::Ref<const Eigen::MatrixXd>& eofs, Rng& rng,
                                    int* label_out, double* scale2_out,
                                    Eigen::VectorXd* effects_out) {
  const Eigen::Index n = eofs.rows();
  const Eigen::Index l = eofs.cols();
  const int g = rng.categorical(pi);
  const ClusterParams& theta = clusters[static_cast<std::size_t>(g)];
  const double a = theta.df;
  const double scale2 = rng.inverse_gamma(0.5 * a, 0.5 * a - 1.0);
  const Eigen::VectorXd z = psd_factor(theta.dispersion) * rng.normal_vector(l);
  const double tau = std::sqrt(std::max(theta.nugget2, 0.0));
  Eigen::VectorXd field = eofs * z;
  for (Eigen::Index i = 0; i < n; ++i) field[i] += tau * rng.normal();
  field *= std::sqrt(scale2);
  if (label_out) *label_out = g;
  if (scale2_out) *scale2_out = scale2;
  if (effects_out) *effects_out = std::sqrt(scale2) * z;
  return field;
}

std::pair<GriddedDataset, LatentState> generate_synthetic(
    const MeanCoefficients& coeffs, const std::vector<ClusterParams>& clusters,
    const Eigen::Ref<const Eigen::VectorXd>& pi, const BasisSet& basis, int n_weeks,
    std::uint64_t seed) {
  const int t2 = static_cast<int>(basis.weeks_per_year());
  if (n_weeks < 1 || n_weeks % t2 != 0)
    throw ArgumentError("generator length must be a whole number of years");
  const int n_years = n_weeks / t2;
  if (n_years > basis.n_years())
    throw CoverageError("generator length exceeds the basis fit window");

  GriddedDataset data;
  data.weeks_per_year = t2;
  data.n_years = n_years;
  data.coords = basis.coords;
  data.values.resize(basis.n_sites(), n_weeks);

  LatentState latent;
  latent.labels.resize(static_cast<std::size_t>(n_weeks));
  latent.scale2.resize(n_weeks);
  latent.effects.resize(basis.rank(), n_weeks);

  Rng rng(seed);
  const TimeIndex idx{t2};
  for (int t = 1; t <= n_weeks; ++t) {
    const Eigen::Vector2d x0_row = basis.x0.row(idx.year_of(t) - 1).transpose();
    const Eigen::VectorXd mu = mean_surface_at(coeffs, basis, x0_row, idx.week_of(t));
    int g = 0;
    double scale2 = 1.0;
    Eigen::VectorXd effects;
    const Eigen::VectorXd eps =
        draw_residual_field(clusters, pi, basis.spatial.eofs, rng, &g, &scale2, &effects);
    data.values.col(t - 1) = mu + eps;
    latent.labels[static_cast<std::size_t>(t - 1)] = g;
    latent.scale2[t - 1] = scale2;
    latent.effects.col(t - 1) = effects;
  }
  data.validate();
  return {std::move(data), std::move(latent)};
}

void save_parameters(const ModelParameters& params, const std::filesystem::path& path) {
  MatrixBundle bundle;
  const Eigen::Index k = static_cast<Eigen::Index>(params.clusters.size());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const std::string tag = std::to_string(i + 1) + "_" + std::to_string(j + 1);
      bundle.set_vector("beta_" + tag, params.coeffs.beta[i][j]);
      bundle.set_scalar("mu_hyper_" + tag, params.coeffs.mu_hyper[i][j]);
      bundle.set_scalar("sigma2_hyper_" + tag, params.coeffs.sigma2_hyper[i][j]);
    }
  Eigen::VectorXd nugget(k), df(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    bundle.set("dispersion_" + std::to_string(i + 1),
               params.clusters[static_cast<std::size_t>(i)].dispersion);
    nugget[i] = params.clusters[static_cast<std::size_t>(i)].nugget2;
    df[i] = params.clusters[static_cast<std::size_t>(i)].df;
  }
  bundle.set_vector("nugget2", nugget);
  bundle.set_vector("df", df);
  bundle.set_vector("pi", params.weights.pi);
  bundle.set_vector("sticks", params.weights.sticks);
  bundle.set_vector("log1m_sticks", params.weights.effective_log1m());
  bundle.set_scalar("concentration", params.weights.concentration);
  bundle.save(path);
}

ModelParameters load_parameters(const std::filesystem::path& path) {
  const MatrixBundle bundle = MatrixBundle::load(path);
  ModelParameters params;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const std::string tag = std::to_string(i + 1) + "_" + std::to_string(j + 1);
      params.coeffs.beta[i][j] = bundle.vector("beta_" + tag);
      params.coeffs.mu_hyper[i][j] = bundle.scalar("mu_hyper_" + tag);
      params.coeffs.sigma2_hyper[i][j] = bundle.scalar("sigma2_hyper_" + tag);
    }
  const Eigen::VectorXd nugget = bundle.vector("nugget2");
  const Eigen::VectorXd df = bundle.vector("df");
  params.clusters.resize(static_cast<std::size_t>(nugget.size()));
  for (Eigen::Index i = 0; i < nugget.size(); ++i) {
    ClusterParams& c = params.clusters[static_cast<std::size_t>(i)];
    c.dispersion = bundle.at("dispersion_" + std::to_string(i + 1));
    c.nugget2 = nugget[i];
    c.df = df[i];
  }
  params.weights.pi = bundle.vector("pi");
  params.weights.sticks = bundle.vector("sticks");
  if (bundle.contains("log1m_sticks"))
    params.weights.log1m_sticks = bundle.vector("log1m_sticks");
  params.weights.concentration = bundle.scalar("concentration");
  return params;
}

}  // namespace stmix
