#include "stmix/sampler.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "stmix/container.hpp"
#include "stmix/error.hpp"
#include "stmix/special.hpp"

namespace stmix {

namespace {

constexpr double kScale2Floor = 1e-10;
constexpr double kNugget2Floor = 1e-10;

double log_inverse_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * d * d / var;
}

double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_inverse_wishart_pdf(const Eigen::MatrixXd& x, double df,
                               const Eigen::MatrixXd& scale) {
  const int p = static_cast<int>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> llt_x(x);
  Eigen::LLT<Eigen::MatrixXd> llt_s(scale);
  if (llt_x.info() != Eigen::Success || llt_s.info() != Eigen::Success)
    throw NumericError("inverse-wishart density needs positive definite matrices");
  double logdet_x = 0.0, logdet_s = 0.0;
  for (int i = 0; i < p; ++i) {
    logdet_x += 2.0 * std::log(llt_x.matrixL()(i, i));
    logdet_s += 2.0 * std::log(llt_s.matrixL()(i, i));
  }
  const double trace = llt_x.solve(scale).trace();
  return 0.5 * df * logdet_s - 0.5 * df * p * std::log(2.0) -
         log_multivariate_gamma(p, 0.5 * df) - 0.5 * (df + p + 1.0) * logdet_x - 0.5 * trace;
}

}  // namespace

void McmcConfig::validate() const {
  if (n_iter < 1) throw ArgumentError("n_iter must be positive");
  if (burn_in < 0 || burn_in >= n_iter) throw ArgumentError("burn_in must lie in [0, n_iter)");
  if (thin < 1) throw ArgumentError("thin must be at least 1");
  if (retained() < 1) throw ArgumentError("no draws would be retained");
  if (n_components < 1) throw ArgumentError("need at least one mixture component");
  if (df_grid.size() < 1 || df_grid.value(0) <= 2.0)
    throw ArgumentError("df grid must start above 2");
}

GibbsSampler::GibbsSampler(const GriddedDataset& data, const BasisSet& basis,
                           const McmcConfig& config)
    : basis_(basis), config_(config), rng_(config.seed) {
  config_.validate();
  basis_.validate();
  data.validate();
  if (data.n_sites() != basis.n_sites())
    throw ShapeError("dataset and basis disagree on site count");
  if (data.n_years != basis.n_years() || data.weeks_per_year != basis.weeks_per_year())
    throw ShapeError("dataset and basis disagree on the calendar");

  y_ = data.values;
  const Eigen::Index t = y_.cols();
  year_of_.resize(static_cast<std::size_t>(t));
  week_of_.resize(static_cast<std::size_t>(t));
  const TimeIndex idx = data.time();
  for (Eigen::Index i = 0; i < t; ++i) {
    year_of_[static_cast<std::size_t>(i)] = idx.year_of(static_cast<int>(i) + 1) - 1;
    week_of_[static_cast<std::size_t>(i)] = idx.week_of(static_cast<int>(i) + 1) - 1;
  }

  for (int j = 0; j < 2; ++j) {
    const Eigen::MatrixXd& x2j = (j == 0) ? basis_.x2_in : basis_.x2_out;
    gy_[j] = x2j.transpose() * y_;
    mh_[j] = x2j.transpose() * basis_.spatial.eofs;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x2j.transpose() * x2j);
    if (solver.info() != Eigen::Success)
      throw NumericError("eigendecomposition of a spatial Gram matrix failed");
    ug_[j] = solver.eigenvectors();
    lamg_[j] = solver.eigenvalues().cwiseMax(0.0);
  }

  const DfGrid& grid = config_.df_grid;
  grid_const_.resize(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const double a = grid.value(i);
    grid_const_[i] = 0.5 * a * std::log(0.5 * a - 1.0) - std::lgamma(0.5 * a);
  }

  delta_prior_ = basis_.spatial.eigenvalues.asDiagonal();
}

void GibbsSampler::set_data(const Eigen::MatrixXd& values) {
  if (values.rows() != y_.rows() || values.cols() != y_.cols())
    throw ShapeError("replacement observations have the wrong shape");
  y_ = values;
  for (int j = 0; j < 2; ++j) {
    const Eigen::MatrixXd& x2j = (j == 0) ? basis_.x2_in : basis_.x2_out;
    gy_[j] = x2j.transpose() * y_;
  }
}

void GibbsSampler::refresh_mean() { mu_ = mean_matrix(coeffs_, basis_); }

void GibbsSampler::initialize() {
  const Eigen::Index p = basis_.p();
  const Eigen::Index l = basis_.rank();
  const Eigen::Index t = y_.cols();
  const int k = config_.n_components;

  // beta from the preliminary least-squares fit; both projection blocks get
  // the same coefficients, which reproduces the full-design fit exactly.
  GriddedDataset tmp;
  tmp.values = y_;
  tmp.coords = basis_.coords;
  tmp.n_years = static_cast<int>(basis_.n_years());
  tmp.weeks_per_year = static_cast<int>(basis_.weeks_per_year());
  const Eigen::MatrixXd x2_full = basis_.x2_in + basis_.x2_out;
  const PreliminaryFit fit = preliminary_least_squares(tmp, basis_.x0, basis_.x1, x2_full);
  coeffs_ = MeanCoefficients::zeros(p);
  coeffs_.beta[0][0] = Eigen::Map<const Eigen::VectorXd>(fit.coeffs_intercept.data(), p);
  coeffs_.beta[0][1] = coeffs_.beta[0][0];
  coeffs_.beta[1][0] = Eigen::Map<const Eigen::VectorXd>(fit.coeffs_slope.data(), p);
  coeffs_.beta[1][1] = coeffs_.beta[1][0];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      coeffs_.mu_hyper[i][j] = 0.0;
      coeffs_.sigma2_hyper[i][j] = 1.0;
    }
  refresh_mean();

  clusters_.assign(static_cast<std::size_t>(k), ClusterParams{});
  const DfGrid& grid = config_.df_grid;
  for (int i = 0; i < k; ++i) {
    clusters_[static_cast<std::size_t>(i)].dispersion = delta_prior_;
    clusters_[static_cast<std::size_t>(i)].nugget2 = 0.1;
    const int gi = (k == 1) ? (grid.size() - 1) / 2
                            : static_cast<int>(std::lround(static_cast<double>(i) *
                                                           (grid.size() - 1) / (k - 1)));
    clusters_[static_cast<std::size_t>(i)].df = grid.value(gi);
  }

  weights_.concentration = 1.0;
  weights_.sticks.resize(k);
  weights_.log1m_sticks.resize(k);
  for (int i = 0; i < k; ++i) weights_.sticks[i] = 1.0 / static_cast<double>(k - i);
  weights_.sticks[k - 1] = 1.0;
  for (int i = 0; i < k; ++i)
    weights_.log1m_sticks[i] = weights_.sticks[i] < 1.0
                                   ? std::log1p(-weights_.sticks[i])
                                   : -std::numeric_limits<double>::infinity();
  weights_.pi = stick_breaking(weights_.sticks);

  latent_.labels.resize(static_cast<std::size_t>(t));
  for (Eigen::Index i = 0; i < t; ++i)
    latent_.labels[static_cast<std::size_t>(i)] =
        static_cast<int>(rng_.uniform() * k) % k;
  latent_.scale2 = Eigen::VectorXd::Ones(t);
  latent_.effects.resize(l, t);
  const Eigen::MatrixXd resid = y_ - mu_;
  latent_.effects = basis_.spatial.eofs.transpose() * resid;
  iteration_ = 0;
}

void GibbsSampler::update_beta() {
  const Eigen::Index t = y_.cols();
  const Eigen::Index p_s = basis_.p_spatial();
  const Eigen::Index p_t = basis_.p_seasonal();
  const Eigen::Index t2 = basis_.weeks_per_year();

  Eigen::VectorXd omega(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    const ClusterParams& c = clusters_[static_cast<std::size_t>(latent_.labels[static_cast<std::size_t>(i)])];
    omega[i] = 1.0 / (latent_.scale2[i] * c.nugget2);
  }

  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      // Gram factors of the other covariate block within the same projection
      // block; cross terms across projection blocks vanish (H' X2;2 = 0).
      const int other = 1 - i;
      Eigen::MatrixXd b_other(p_s, p_t);
      {
        const auto map = Eigen::Map<const Eigen::MatrixXd>(coeffs_.beta[other][j].data(), p_s, p_t);
        b_other = map;
      }
      Eigen::MatrixXd gram_b_other(p_s, p_t);
      {
        // G_j B = U diag(lam) U' B
        gram_b_other = ug_[j] * (lamg_[j].asDiagonal() * (ug_[j].transpose() * b_other));
      }

      Eigen::VectorXd diag_weight = Eigen::VectorXd::Zero(t2);
      Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(p_s, p_t);
      for (Eigen::Index tt = 0; tt < t; ++tt) {
        const int y = year_of_[static_cast<std::size_t>(tt)];
        const int w = week_of_[static_cast<std::size_t>(tt)];
        const double x0i = basis_.x0(y, i);
        const double x0o = basis_.x0(y, other);
        diag_weight[w] += omega[tt] * x0i * x0i;
        const Eigen::VectorXd x1_row = basis_.x1.row(w).transpose();
        Eigen::VectorXd proj = gy_[j].col(tt);
        proj.noalias() -= mh_[j] * latent_.effects.col(tt);
        proj.noalias() -= x0o * (gram_b_other * x1_row);
        rhs.noalias() += (omega[tt] * x0i) * proj * x1_row.transpose();
      }

      const double prior_prec = 1.0 / coeffs_.sigma2_hyper[i][j];
      rhs.array() += coeffs_.mu_hyper[i][j] * prior_prec;

      const Eigen::MatrixXd s_small =
          basis_.x1.transpose() * diag_weight.asDiagonal() * basis_.x1;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s_small);
      if (solver.info() != Eigen::Success)
        throw NumericError("seasonal precision eigendecomposition failed");
      const Eigen::MatrixXd us = solver.eigenvectors();
      const Eigen::VectorXd lams = solver.eigenvalues().cwiseMax(0.0);

      // Posterior precision (S (x) G_j + prior_prec I) diagonalizes in the
      // shared eigenbasis; solve and sample there.
      Eigen::MatrixXd rot = ug_[j].transpose() * rhs * us;
      Eigen::MatrixXd denom(p_s, p_t);
      for (Eigen::Index c = 0; c < p_t; ++c)
        denom.col(c) = (lamg_[j].array() * lams[c] + prior_prec).matrix();
      rot.array() /= denom.array();
      Eigen::MatrixXd draw_mat = rng_.normal_matrix(p_s, p_t);
      draw_mat.array() /= denom.array().sqrt();
      const Eigen::MatrixXd b_new = ug_[j] * (rot + draw_mat) * us.transpose();
      coeffs_.beta[i][j] = Eigen::Map<const Eigen::VectorXd>(b_new.data(), p_s * p_t);
    }
  }
  refresh_mean();
}

void GibbsSampler::update_mean_hypers() {
  const double p = static_cast<double>(basis_.p());
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd& beta = coeffs_.beta[i][j];
      double& mu = coeffs_.mu_hyper[i][j];
      double& sigma2 = coeffs_.sigma2_hyper[i][j];
      const double prior_var = config_.hyper.s2(i);
      const double post_var = 1.0 / (1.0 / prior_var + p / sigma2);
      const double post_mean = post_var * beta.sum() / sigma2;
      mu = post_mean + std::sqrt(post_var) * rng_.normal();
      const double rss = (beta.array() - mu).square().sum();
      sigma2 = rng_.inverse_gamma(config_.hyper.shape(i) + 0.5 * p,
                                  config_.hyper.rate(i) + 0.5 * rss);
    }
  }
}

void GibbsSampler::update_labels() {
  const Eigen::Index t = y_.cols();
  const Eigen::Index n = y_.rows();
  const Eigen::Index l = basis_.rank();
  const int k = config_.n_components;

  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt(static_cast<std::size_t>(k));
  Eigen::VectorXd logdet(k), log_pi(k);
  for (int c = 0; c < k; ++c) {
    llt[static_cast<std::size_t>(c)].compute(clusters_[static_cast<std::size_t>(c)].dispersion);
    if (llt[static_cast<std::size_t>(c)].info() != Eigen::Success)
      throw NumericError("cluster dispersion lost positive definiteness");
    double ld = 0.0;
    for (Eigen::Index i = 0; i < l; ++i)
      ld += 2.0 * std::log(llt[static_cast<std::size_t>(c)].matrixL()(i, i));
    logdet[c] = ld;
    log_pi[c] = weights_.pi[c] > 0.0 ? std::log(weights_.pi[c])
                                     : -std::numeric_limits<double>::infinity();
  }

  Eigen::VectorXd logw(k);
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const double s2 = latent_.scale2[tt];
    const Eigen::VectorXd w_t = latent_.effects.col(tt);
    const Eigen::VectorXd resid =
        y_.col(tt) - mu_.col(tt) - basis_.spatial.eofs * w_t;
    const double ssr = resid.squaredNorm();
    for (int c = 0; c < k; ++c) {
      const ClusterParams& theta = clusters_[static_cast<std::size_t>(c)];
      const double qf = w_t.dot(llt[static_cast<std::size_t>(c)].solve(w_t));
      const double a = theta.df;
      double val = log_pi[c];
      val += -0.5 * l * std::log(2.0 * M_PI * s2) - 0.5 * logdet[c] - 0.5 * qf / s2;
      val += 0.5 * a * std::log(0.5 * a - 1.0) - std::lgamma(0.5 * a) -
             (0.5 * a + 1.0) * std::log(s2) - (0.5 * a - 1.0) / s2;
      val += -0.5 * n * std::log(2.0 * M_PI * s2 * theta.nugget2) -
             0.5 * ssr / (s2 * theta.nugget2);
      logw[c] = val;
    }
    latent_.labels[static_cast<std::size_t>(tt)] = rng_.categorical_from_log(logw);
  }
}

void GibbsSampler::update_scales_effects() {
  const Eigen::Index t = y_.cols();
  const Eigen::Index n = y_.rows();
  const Eigen::Index l = basis_.rank();
  const int k = config_.n_components;

  // Per-cluster factors reused across time points.
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt_phi(static_cast<std::size_t>(k));
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt_a(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const ClusterParams& theta = clusters_[static_cast<std::size_t>(c)];
    llt_phi[static_cast<std::size_t>(c)].compute(theta.dispersion);
    if (llt_phi[static_cast<std::size_t>(c)].info() != Eigen::Success)
      throw NumericError("cluster dispersion lost positive definiteness");
    Eigen::MatrixXd a_mat =
        llt_phi[static_cast<std::size_t>(c)].solve(Eigen::MatrixXd::Identity(l, l));
    a_mat = 0.5 * (a_mat + a_mat.transpose()).eval();
    a_mat.diagonal().array() += 1.0 / theta.nugget2;
    llt_a[static_cast<std::size_t>(c)].compute(a_mat);
    if (llt_a[static_cast<std::size_t>(c)].info() != Eigen::Success)
      throw NumericError("random-effect precision lost positive definiteness");
  }

  const Eigen::MatrixXd& eofs = basis_.spatial.eofs;
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = latent_.labels[static_cast<std::size_t>(tt)];
    const ClusterParams& theta = clusters_[static_cast<std::size_t>(g)];
    const double a = theta.df;
    const Eigen::VectorXd resid = y_.col(tt) - mu_.col(tt);

    // sigma2_t given the current W_t.
    const Eigen::VectorXd w_cur = latent_.effects.col(tt);
    const double ssr = (resid - eofs * w_cur).squaredNorm();
    const double qf = w_cur.dot(llt_phi[static_cast<std::size_t>(g)].solve(w_cur));
    const double shape = 0.5 * a + 0.5 * static_cast<double>(n + l);
    const double rate = (0.5 * a - 1.0) + 0.5 * (qf + ssr / theta.nugget2);
    double s2 = rng_.inverse_gamma(shape, rate);
    s2 = std::max(s2, kScale2Floor);
    latent_.scale2[tt] = s2;

    // W_t given the fresh sigma2_t: an L x L solve.
    const Eigen::VectorXd proj = eofs.transpose() * resid;
    const Eigen::VectorXd mean = llt_a[static_cast<std::size_t>(g)].solve(proj) / theta.nugget2;
    const Eigen::VectorXd z = rng_.normal_vector(l);
    const Eigen::VectorXd noise =
        llt_a[static_cast<std::size_t>(g)].matrixU().solve(z);
    latent_.effects.col(tt) = mean + std::sqrt(s2) * noise;
  }
}

void GibbsSampler::update_dispersions() {
  const Eigen::Index l = basis_.rank();
  const int k = config_.n_components;
  const Eigen::Index t = y_.cols();
  std::vector<Eigen::MatrixXd> scatter(static_cast<std::size_t>(k),
                                       Eigen::MatrixXd::Zero(l, l));
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = latent_.labels[static_cast<std::size_t>(tt)];
    const Eigen::VectorXd z = latent_.effects.col(tt) / std::sqrt(latent_.scale2[tt]);
    scatter[static_cast<std::size_t>(g)].noalias() += z * z.transpose();
    counts[g] += 1;
  }
  for (int c = 0; c < k; ++c) {
    // Empty clusters reduce to the prior exactly.
    const double df = static_cast<double>(l) + 2.0 + counts[c];
    const Eigen::MatrixXd scale = delta_prior_ + scatter[static_cast<std::size_t>(c)];
    clusters_[static_cast<std::size_t>(c)].dispersion = rng_.inverse_wishart(df, scale);
  }
}

void GibbsSampler::update_nuggets() {
  const Eigen::Index t = y_.cols();
  const Eigen::Index n = y_.rows();
  const int k = config_.n_components;
  Eigen::VectorXd rss = Eigen::VectorXd::Zero(k);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
  const Eigen::MatrixXd& eofs = basis_.spatial.eofs;
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = latent_.labels[static_cast<std::size_t>(tt)];
    const double ssr =
        (y_.col(tt) - mu_.col(tt) - eofs * latent_.effects.col(tt)).squaredNorm();
    rss[g] += ssr / latent_.scale2[tt];
    counts[g] += 1;
  }
  for (int c = 0; c < k; ++c) {
    const double shape = config_.hyper.nugget_shape + 0.5 * static_cast<double>(n) * counts[c];
    const double rate = config_.hyper.nugget_rate + 0.5 * rss[c];
    clusters_[static_cast<std::size_t>(c)].nugget2 =
        std::max(rng_.inverse_gamma(shape, rate), kNugget2Floor);
  }
}

void GibbsSampler::update_df() {
  const Eigen::Index t = y_.cols();
  const int k = config_.n_components;
  const DfGrid& grid = config_.df_grid;
  Eigen::VectorXd sum_log = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd sum_inv = Eigen::VectorXd::Zero(k);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = latent_.labels[static_cast<std::size_t>(tt)];
    sum_log[g] += std::log(latent_.scale2[tt]);
    sum_inv[g] += 1.0 / latent_.scale2[tt];
    counts[g] += 1;
  }
  Eigen::VectorXd logw(grid.size());
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < grid.size(); ++i) {
      const double a = grid.value(i);
      logw[i] = counts[c] * grid_const_[i] - (0.5 * a + 1.0) * sum_log[c] -
                (0.5 * a - 1.0) * sum_inv[c];
    }
    clusters_[static_cast<std::size_t>(c)].df = grid.value(rng_.categorical_from_log(logw));
  }
}

void GibbsSampler::update_sticks() {
  const int k = config_.n_components;
  Eigen::VectorXd counts = cluster_counts();
  double tail = 0.0;
  Eigen::VectorXd tail_counts(k);
  for (int c = k - 1; c >= 0; --c) {
    tail_counts[c] = tail;
    tail += counts[c];
  }
  if (weights_.log1m_sticks.size() != k) weights_.log1m_sticks.resize(k);
  for (int c = 0; c + 1 < k; ++c) {
    // Drawn in log space so log(1 - V) survives V rounding to one.
    double log1m = 0.0;
    const double v = rng_.beta_log(1.0 + counts[c],
                                   weights_.concentration + tail_counts[c], &log1m);
    weights_.sticks[c] = v;
    weights_.log1m_sticks[c] = log1m;
  }
  weights_.sticks[k - 1] = 1.0;
  weights_.log1m_sticks[k - 1] = -std::numeric_limits<double>::infinity();
  weights_.pi = stick_breaking(weights_.sticks);
}

void GibbsSampler::update_concentration() {
  const int k = config_.n_components;
  double rate = config_.hyper.concentration_rate;
  for (int c = 0; c + 1 < k; ++c) rate -= weights_.log1m_sticks[c];
  const double shape = config_.hyper.concentration_shape + static_cast<double>(k - 1);
  weights_.concentration = std::max(rng_.gamma(shape, 1.0 / rate), 1e-300);
}

Eigen::VectorXd GibbsSampler::cluster_counts() const {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(config_.n_components);
  for (int g : latent_.labels) counts[g] += 1.0;
  return counts;
}

void GibbsSampler::run_block(const char* name, void (GibbsSampler::*block)()) {
  try {
    (this->*block)();
  } catch (const Error& e) {
    throw NumericError("iteration " + std::to_string(iteration_) + ", block " + name + ": " +
                       e.what());
  }
}

void GibbsSampler::sweep() {
  ++iteration_;
  run_block("beta", &GibbsSampler::update_beta);
  run_block("mean_hypers", &GibbsSampler::update_mean_hypers);
  run_block("labels", &GibbsSampler::update_labels);
  run_block("scales_effects", &GibbsSampler::update_scales_effects);
  run_block("dispersions", &GibbsSampler::update_dispersions);
  run_block("nuggets", &GibbsSampler::update_nuggets);
  run_block("df", &GibbsSampler::update_df);
  run_block("sticks", &GibbsSampler::update_sticks);
  run_block("concentration", &GibbsSampler::update_concentration);
}

double GibbsSampler::log_posterior() const {
  const Eigen::Index t = y_.cols();
  const Eigen::Index n = y_.rows();
  const Eigen::Index l = basis_.rank();
  const int k = config_.n_components;
  const Eigen::MatrixXd& eofs = basis_.spatial.eofs;

  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt(static_cast<std::size_t>(k));
  Eigen::VectorXd logdet(k);
  for (int c = 0; c < k; ++c) {
    llt[static_cast<std::size_t>(c)].compute(clusters_[static_cast<std::size_t>(c)].dispersion);
    if (llt[static_cast<std::size_t>(c)].info() != Eigen::Success)
      throw NumericError("cluster dispersion lost positive definiteness");
    double ld = 0.0;
    for (Eigen::Index i = 0; i < l; ++i)
      ld += 2.0 * std::log(llt[static_cast<std::size_t>(c)].matrixL()(i, i));
    logdet[c] = ld;
  }

  double lp = 0.0;
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = latent_.labels[static_cast<std::size_t>(tt)];
    const ClusterParams& theta = clusters_[static_cast<std::size_t>(g)];
    const double s2 = latent_.scale2[tt];
    const Eigen::VectorXd w_t = latent_.effects.col(tt);
    const Eigen::VectorXd resid = y_.col(tt) - mu_.col(tt) - eofs * w_t;
    lp += -0.5 * n * std::log(2.0 * M_PI * s2 * theta.nugget2) -
          0.5 * resid.squaredNorm() / (s2 * theta.nugget2);
    lp += -0.5 * l * std::log(2.0 * M_PI * s2) - 0.5 * logdet[g] -
          0.5 * w_t.dot(llt[static_cast<std::size_t>(g)].solve(w_t)) / s2;
    lp += log_inverse_gamma_pdf(s2, 0.5 * theta.df, 0.5 * theta.df - 1.0);
    lp += weights_.pi[g] > 0.0 ? std::log(weights_.pi[g])
                               : -std::numeric_limits<double>::infinity();
  }
  for (int c = 0; c < k; ++c) {
    const ClusterParams& theta = clusters_[static_cast<std::size_t>(c)];
    lp += log_inverse_wishart_pdf(theta.dispersion, static_cast<double>(l) + 2.0, delta_prior_);
    lp += log_inverse_gamma_pdf(theta.nugget2, config_.hyper.nugget_shape,
                                config_.hyper.nugget_rate);
    lp -= std::log(static_cast<double>(config_.df_grid.size()));
  }
  for (int c = 0; c + 1 < k; ++c)
    lp += std::log(weights_.concentration) +
          (weights_.concentration - 1.0) * weights_.log1m_sticks[c];
  lp += log_gamma_pdf(weights_.concentration, config_.hyper.concentration_shape,
                      config_.hyper.concentration_rate);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd& beta = coeffs_.beta[i][j];
      const double mu = coeffs_.mu_hyper[i][j];
      const double s2 = coeffs_.sigma2_hyper[i][j];
      lp += -0.5 * beta.size() * std::log(2.0 * M_PI * s2) -
            0.5 * (beta.array() - mu).square().sum() / s2;
      lp += log_normal_pdf(mu, 0.0, config_.hyper.s2(i));
      lp += log_inverse_gamma_pdf(s2, config_.hyper.shape(i), config_.hyper.rate(i));
    }
  }
  return lp;
}

Draw GibbsSampler::snapshot() const {
  Draw d;
  d.coeffs = coeffs_;
  d.clusters = clusters_;
  d.weights = weights_;
  d.log_post = log_posterior();
  d.counts = cluster_counts().cast<int>();
  d.scale2_mean = latent_.scale2.mean();
  return d;
}

void GibbsSampler::draw_state_from_prior() {
  const Eigen::Index p = basis_.p();
  const Eigen::Index l = basis_.rank();
  const Eigen::Index t = y_.cols();
  const int k = config_.n_components;
  const Hyperparameters& hyper = config_.hyper;

  coeffs_ = MeanCoefficients::zeros(p);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      coeffs_.mu_hyper[i][j] = std::sqrt(hyper.s2(i)) * rng_.normal();
      coeffs_.sigma2_hyper[i][j] = rng_.inverse_gamma(hyper.shape(i), hyper.rate(i));
      coeffs_.beta[i][j] = (coeffs_.mu_hyper[i][j] +
                            std::sqrt(coeffs_.sigma2_hyper[i][j]) *
                                rng_.normal_vector(p).array())
                               .matrix();
    }
  }
  refresh_mean();

  weights_.concentration =
      std::max(rng_.gamma(hyper.concentration_shape, 1.0 / hyper.concentration_rate), 1e-300);
  weights_.sticks.resize(k);
  weights_.log1m_sticks.resize(k);
  for (int c = 0; c + 1 < k; ++c) {
    double log1m = 0.0;
    weights_.sticks[c] = rng_.beta_log(1.0, weights_.concentration, &log1m);
    weights_.log1m_sticks[c] = log1m;
  }
  weights_.sticks[k - 1] = 1.0;
  weights_.log1m_sticks[k - 1] = -std::numeric_limits<double>::infinity();
  weights_.pi = stick_breaking(weights_.sticks);

  clusters_.assign(static_cast<std::size_t>(k), ClusterParams{});
  const DfGrid& grid = config_.df_grid;
  for (int c = 0; c < k; ++c) {
    ClusterParams& theta = clusters_[static_cast<std::size_t>(c)];
    theta.dispersion = rng_.inverse_wishart(static_cast<double>(l) + 2.0, delta_prior_);
    theta.nugget2 = std::max(rng_.inverse_gamma(hyper.nugget_shape, hyper.nugget_rate),
                             kNugget2Floor);
    theta.df = grid.value(static_cast<int>(rng_.uniform() * grid.size()) % grid.size());
  }

  latent_.labels.resize(static_cast<std::size_t>(t));
  latent_.scale2.resize(t);
  latent_.effects.resize(l, t);
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = rng_.categorical(weights_.pi);
    latent_.labels[static_cast<std::size_t>(tt)] = g;
    const ClusterParams& theta = clusters_[static_cast<std::size_t>(g)];
    const double s2 =
        std::max(rng_.inverse_gamma(0.5 * theta.df, 0.5 * theta.df - 1.0), kScale2Floor);
    latent_.scale2[tt] = s2;
    const Eigen::VectorXd z = psd_factor(theta.dispersion) * rng_.normal_vector(l);
    latent_.effects.col(tt) = std::sqrt(s2) * z;
  }
}

Eigen::MatrixXd GibbsSampler::draw_data() {
  const Eigen::Index t = y_.cols();
  const Eigen::Index n = y_.rows();
  Eigen::MatrixXd values(n, t);
  const Eigen::MatrixXd& eofs = basis_.spatial.eofs;
  for (Eigen::Index tt = 0; tt < t; ++tt) {
    const int g = latent_.labels[static_cast<std::size_t>(tt)];
    const double sd =
        std::sqrt(latent_.scale2[tt] * clusters_[static_cast<std::size_t>(g)].nugget2);
    values.col(tt) = mu_.col(tt) + eofs * latent_.effects.col(tt) +
                     sd * rng_.normal_vector(n);
  }
  return values;
}

PosteriorSamples gibbs_fit(const GriddedDataset& data, const BasisSet& basis,
                           const McmcConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  GibbsSampler sampler(data, basis, config);
  sampler.initialize();
  PosteriorSamples samples;
  samples.config = config;
  samples.draws.reserve(static_cast<std::size_t>(config.retained()));
  for (int iter = 1; iter <= config.n_iter; ++iter) {
    sampler.sweep();
    if (iter > config.burn_in && (iter - config.burn_in) % config.thin == 0)
      samples.draws.push_back(sampler.snapshot());
  }
  samples.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return samples;
}

// --- store I/O ---------------------------------------------------------------

namespace {

constexpr int kChunkSize = 1000;

nlohmann::json config_to_json(const McmcConfig& config) {
  nlohmann::json j;
  j["n_iter"] = config.n_iter;
  j["burn_in"] = config.burn_in;
  j["thin"] = config.thin;
  j["n_components"] = config.n_components;
  j["seed"] = config.seed;
  j["df_grid"] = {{"min_tenths", config.df_grid.min_tenths},
                  {"max_tenths", config.df_grid.max_tenths},
                  {"step_tenths", config.df_grid.step_tenths}};
  const Hyperparameters& h = config.hyper;
  j["hyper"] = {{"s2_intercept", h.s2_intercept},
                {"s2_slope", h.s2_slope},
                {"shape_intercept", h.shape_intercept},
                {"rate_intercept", h.rate_intercept},
                {"shape_slope", h.shape_slope},
                {"rate_slope", h.rate_slope},
                {"nugget_shape", h.nugget_shape},
                {"nugget_rate", h.nugget_rate},
                {"concentration_shape", h.concentration_shape},
                {"concentration_rate", h.concentration_rate}};
  return j;
}

McmcConfig config_from_json(const nlohmann::json& j) {
  McmcConfig config;
  config.n_iter = j.at("n_iter").get<int>();
  config.burn_in = j.at("burn_in").get<int>();
  config.thin = j.at("thin").get<int>();
  config.n_components = j.at("n_components").get<int>();
  config.seed = j.at("seed").get<std::uint64_t>();
  config.df_grid.min_tenths = j.at("df_grid").at("min_tenths").get<int>();
  config.df_grid.max_tenths = j.at("df_grid").at("max_tenths").get<int>();
  config.df_grid.step_tenths = j.at("df_grid").at("step_tenths").get<int>();
  Hyperparameters& h = config.hyper;
  const nlohmann::json& hj = j.at("hyper");
  h.s2_intercept = hj.at("s2_intercept").get<double>();
  h.s2_slope = hj.at("s2_slope").get<double>();
  h.shape_intercept = hj.at("shape_intercept").get<double>();
  h.rate_intercept = hj.at("rate_intercept").get<double>();
  h.shape_slope = hj.at("shape_slope").get<double>();
  h.rate_slope = hj.at("rate_slope").get<double>();
  h.nugget_shape = hj.at("nugget_shape").get<double>();
  h.nugget_rate = hj.at("nugget_rate").get<double>();
  h.concentration_shape = hj.at("concentration_shape").get<double>();
  h.concentration_rate = hj.at("concentration_rate").get<double>();
  return config;
}

std::string chunk_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "chunk_%05d.bin", index);
  return buf;
}

}  // namespace

void PosteriorSamples::save(const std::filesystem::path& dir) const {
  if (draws.empty()) throw ArgumentError("no draws to save");
  std::filesystem::create_directories(dir);
  const Eigen::Index b_total = size();
  const Eigen::Index p = draws.front().coeffs.beta[0][0].size();
  const Eigen::Index k = static_cast<Eigen::Index>(draws.front().clusters.size());
  const Eigen::Index l = draws.front().clusters.front().dispersion.rows();
  const int n_chunks = static_cast<int>((b_total + kChunkSize - 1) / kChunkSize);

  nlohmann::json manifest;
  manifest["format"] = "stmix-samples-v1";
  manifest["config"] = config_to_json(config);
  manifest["draws"] = b_total;
  manifest["chunk_size"] = kChunkSize;
  manifest["n_chunks"] = n_chunks;
  manifest["p"] = p;
  manifest["k"] = k;
  manifest["l"] = l;
  manifest["timings"] = {{"elapsed_seconds", elapsed_seconds}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write samples manifest");
  os << manifest.dump(2) << '\n';
  os.close();

  for (int chunk = 0; chunk < n_chunks; ++chunk) {
    const Eigen::Index lo = static_cast<Eigen::Index>(chunk) * kChunkSize;
    const Eigen::Index hi = std::min(lo + kChunkSize, b_total);
    const Eigen::Index b = hi - lo;
    MatrixBundle bundle;
    Eigen::MatrixXd beta[2][2];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) beta[i][j].resize(p, b);
    Eigen::MatrixXd mu_hyper(4, b), sigma2_hyper(4, b), dispersion(l * l * k, b);
    Eigen::MatrixXd nugget2(k, b), df(k, b), pi(k, b), sticks(k, b), log1m(k, b);
    Eigen::MatrixXd concentration(1, b), log_post(1, b), counts(k, b), scale2_mean(1, b);
    for (Eigen::Index d = 0; d < b; ++d) {
      const Draw& draw = draws[static_cast<std::size_t>(lo + d)];
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          beta[i][j].col(d) = draw.coeffs.beta[i][j];
          mu_hyper(2 * i + j, d) = draw.coeffs.mu_hyper[i][j];
          sigma2_hyper(2 * i + j, d) = draw.coeffs.sigma2_hyper[i][j];
        }
      for (Eigen::Index c = 0; c < k; ++c) {
        const ClusterParams& theta = draw.clusters[static_cast<std::size_t>(c)];
        dispersion.block(c * l * l, d, l * l, 1) =
            Eigen::Map<const Eigen::VectorXd>(theta.dispersion.data(), l * l);
        nugget2(c, d) = theta.nugget2;
        df(c, d) = theta.df;
        pi(c, d) = draw.weights.pi[c];
        sticks(c, d) = draw.weights.sticks[c];
        log1m(c, d) = draw.weights.effective_log1m()[c];
        counts(c, d) = draw.counts[c];
      }
      concentration(0, d) = draw.weights.concentration;
      log_post(0, d) = draw.log_post;
      scale2_mean(0, d) = draw.scale2_mean;
    }
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        bundle.set("beta_" + std::to_string(i + 1) + "_" + std::to_string(j + 1), beta[i][j]);
    bundle.set("mu_hyper", mu_hyper);
    bundle.set("sigma2_hyper", sigma2_hyper);
    bundle.set("dispersion", dispersion);
    bundle.set("nugget2", nugget2);
    bundle.set("df", df);
    bundle.set("pi", pi);
    bundle.set("sticks", sticks);
    bundle.set("log1m_sticks", log1m);
    bundle.set("concentration", concentration);
    bundle.set("log_post", log_post);
    bundle.set("counts", counts);
    bundle.set("scale2_mean", scale2_mean);
    bundle.save(dir / chunk_name(chunk));
  }
}

PosteriorSamples PosteriorSamples::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open samples manifest in '" + dir.string() + "'");
  nlohmann::json manifest;
  is >> manifest;
  if (manifest.value("format", "") != "stmix-samples-v1")
    throw ParseError("'" + dir.string() + "' is not a samples store");

  PosteriorSamples samples;
  samples.config = config_from_json(manifest.at("config"));
  samples.elapsed_seconds = manifest.at("timings").value("elapsed_seconds", 0.0);
  const Eigen::Index b_total = manifest.at("draws").get<Eigen::Index>();
  const Eigen::Index p = manifest.at("p").get<Eigen::Index>();
  const Eigen::Index k = manifest.at("k").get<Eigen::Index>();
  const Eigen::Index l = manifest.at("l").get<Eigen::Index>();
  const int n_chunks = manifest.at("n_chunks").get<int>();
  samples.draws.reserve(static_cast<std::size_t>(b_total));

  for (int chunk = 0; chunk < n_chunks; ++chunk) {
    const MatrixBundle bundle = MatrixBundle::load(dir / chunk_name(chunk));
    const Eigen::MatrixXd& log_post = bundle.at("log_post");
    const Eigen::Index b = log_post.cols();
    for (Eigen::Index d = 0; d < b; ++d) {
      Draw draw;
      draw.coeffs = MeanCoefficients::zeros(p);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          draw.coeffs.beta[i][j] =
              bundle.at("beta_" + std::to_string(i + 1) + "_" + std::to_string(j + 1)).col(d);
          draw.coeffs.mu_hyper[i][j] = bundle.at("mu_hyper")(2 * i + j, d);
          draw.coeffs.sigma2_hyper[i][j] = bundle.at("sigma2_hyper")(2 * i + j, d);
        }
      draw.clusters.resize(static_cast<std::size_t>(k));
      draw.weights.pi.resize(k);
      draw.weights.sticks.resize(k);
      draw.weights.log1m_sticks.resize(k);
      draw.counts.resize(k);
      for (Eigen::Index c = 0; c < k; ++c) {
        ClusterParams& theta = draw.clusters[static_cast<std::size_t>(c)];
        theta.dispersion =
            Eigen::Map<const Eigen::MatrixXd>(bundle.at("dispersion").col(d).data() + c * l * l,
                                              l, l);
        theta.nugget2 = bundle.at("nugget2")(c, d);
        theta.df = bundle.at("df")(c, d);
        draw.weights.pi[c] = bundle.at("pi")(c, d);
        draw.weights.sticks[c] = bundle.at("sticks")(c, d);
        draw.weights.log1m_sticks[c] = bundle.at("log1m_sticks")(c, d);
        draw.counts[c] = static_cast<int>(bundle.at("counts")(c, d));
      }
      draw.weights.concentration = bundle.at("concentration")(0, d);
      draw.log_post = log_post(0, d);
      draw.scale2_mean = bundle.at("scale2_mean")(0, d);
      samples.draws.push_back(std::move(draw));
    }
  }
  if (samples.size() != b_total)
    throw ParseError("samples store is missing draws: expected " + std::to_string(b_total) +
                     ", found " + std::to_string(samples.size()));
  return samples;
}

std::vector<std::pair<std::string, Eigen::VectorXd>> scalar_traces(
    const PosteriorSamples& samples) {
  const Eigen::Index b = samples.size();
  if (b == 0) throw ArgumentError("empty sample set");
  const Eigen::Index k = static_cast<Eigen::Index>(samples.draws.front().clusters.size());
  std::vector<std::pair<std::string, Eigen::VectorXd>> traces;
  auto add = [&](const std::string& name, auto getter) {
    Eigen::VectorXd v(b);
    for (Eigen::Index d = 0; d < b; ++d) v[d] = getter(samples.draws[static_cast<std::size_t>(d)]);
    traces.emplace_back(name, std::move(v));
  };
  add("log_post", [](const Draw& d) { return d.log_post; });
  add("concentration", [](const Draw& d) { return d.weights.concentration; });
  add("scale2_mean", [](const Draw& d) { return d.scale2_mean; });
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const std::string tag = std::to_string(i + 1) + "_" + std::to_string(j + 1);
      add("mu_hyper_" + tag, [i, j](const Draw& d) { return d.coeffs.mu_hyper[i][j]; });
      add("sigma2_hyper_" + tag, [i, j](const Draw& d) { return d.coeffs.sigma2_hyper[i][j]; });
      add("beta_" + tag + "_1", [i, j](const Draw& d) { return d.coeffs.beta[i][j][0]; });
    }
  for (Eigen::Index c = 0; c < k; ++c) {
    const std::string tag = std::to_string(c + 1);
    add("pi_" + tag, [c](const Draw& d) { return d.weights.pi[c]; });
    add("nugget2_" + tag,
        [c](const Draw& d) { return d.clusters[static_cast<std::size_t>(c)].nugget2; });
    add("df_" + tag, [c](const Draw& d) { return d.clusters[static_cast<std::size_t>(c)].df; });
  }
  return traces;
}

}  // namespace stmix
