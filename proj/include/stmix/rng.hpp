#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "stmix/error.hpp"

namespace stmix {

// splitmix64 step; used to whiten user seeds and derive substreams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random stream. Substreams derived with Rng::substream are
// independent for distinct indices, so parallel ensemble generation gives
// identical output no matter how work is scheduled.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    gen_.seed(seq);
  }

  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed;
    std::uint64_t mixed = splitmix64(s) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return Rng(mixed);
  }

  double uniform() { return unif_(gen_); }

  double normal() { return normal_(gen_); }

  // Gamma(shape, scale); mean = shape * scale.
  double gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
      throw ArgumentError("gamma draw requires positive shape and scale");
    std::gamma_distribution<double> d(shape, scale);
    return d(gen_);
  }

  // Inverse-Gamma(shape, rate); density proportional to x^{-shape-1} exp(-rate/x).
  double inverse_gamma(double shape, double rate) {
    double g = gamma(shape, 1.0 / rate);
    if (g <= 0.0) g = std::numeric_limits<double>::min();
    return 1.0 / g;
  }

  double beta(double a, double b) {
    double x = gamma(a, 1.0);
    double y = gamma(b, 1.0);
    if (x + y <= 0.0) return 0.5;
    return x / (x + y);
  }

  // log of a Gamma(shape, 1) draw; stable for arbitrarily small shapes, where
  // the draw itself would underflow to zero. Uses Gamma(s) ~ Gamma(s+1) U^{1/s}.
  double log_gamma(double shape) {
    if (!(shape > 0.0)) throw ArgumentError("gamma draw requires positive shape");
    if (shape >= 1.0) return std::log(gamma(shape, 1.0));
    return std::log(gamma(shape + 1.0, 1.0)) + std::log(uniform()) / shape;
  }

  // Beta(a, b) draw that also reports log(1 - V) exactly, even when V rounds
  // to one in double precision.
  double beta_log(double a, double b, double* log_one_minus) {
    const double lx = log_gamma(a);
    const double ly = log_gamma(b);
    const double m = std::max(lx, ly);
    const double log_sum = m + std::log(std::exp(lx - m) + std::exp(ly - m));
    if (log_one_minus) *log_one_minus = ly - log_sum;
    return std::exp(lx - log_sum);
  }

  double chisq(double df) { return gamma(0.5 * df, 2.0); }

  // Index draw from unnormalized probabilities.
  int categorical(const Eigen::Ref<const Eigen::VectorXd>& weights) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw ArgumentError("categorical draw requires positive total weight");
    double u = uniform() * total;
    for (Eigen::Index k = 0; k + 1 < weights.size(); ++k) {
      u -= weights[k];
      if (u <= 0.0) return static_cast<int>(k);
    }
    return static_cast<int>(weights.size() - 1);
  }

  // Index draw from log-weights, normalized by log-sum-exp.
  int categorical_from_log(const Eigen::Ref<const Eigen::VectorXd>& log_weights) {
    const double m = log_weights.maxCoeff();
    if (!std::isfinite(m)) throw NumericError("categorical log-weights are all -inf or nan");
    Eigen::VectorXd w = (log_weights.array() - m).exp();
    return categorical(w);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  // N(0, L L') given the lower Cholesky factor L.
  Eigen::VectorXd mvn_chol(const Eigen::Ref<const Eigen::MatrixXd>& chol_lower) {
    return chol_lower * normal_vector(chol_lower.cols());
  }

  // Wishart(df, scale) via the Bartlett decomposition. Requires df > dim - 1.
  Eigen::MatrixXd wishart(double df, const Eigen::Ref<const Eigen::MatrixXd>& scale) {
    const Eigen::Index p = scale.rows();
    if (!(df > static_cast<double>(p) - 1.0))
      throw ArgumentError("wishart draw requires df > dim - 1");
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() != Eigen::Success)
      throw NumericError("wishart scale matrix is not positive definite");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      a(i, i) = std::sqrt(chisq(df - static_cast<double>(i)));
      for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal();
    }
    Eigen::MatrixXd la = llt.matrixL() * a;
    return la * la.transpose();
  }

  // Inverse-Wishart(df, scale); mean = scale / (df - dim - 1) when finite.
  Eigen::MatrixXd inverse_wishart(double df, const Eigen::Ref<const Eigen::MatrixXd>& scale) {
    const Eigen::Index p = scale.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() != Eigen::Success)
      throw NumericError("inverse-wishart scale matrix is not positive definite");
    Eigen::MatrixXd scale_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
    scale_inv = 0.5 * (scale_inv + scale_inv.transpose()).eval();
    Eigen::MatrixXd w = wishart(df, scale_inv);
    Eigen::LLT<Eigen::MatrixXd> lltw(w);
    if (lltw.info() != Eigen::Success)
      throw NumericError("inverse-wishart draw is numerically singular");
    Eigen::MatrixXd inv = lltw.solve(Eigen::MatrixXd::Identity(p, p));
    return 0.5 * (inv + inv.transpose()).eval();
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unif_{std::numeric_limits<double>::min(), 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace stmix
