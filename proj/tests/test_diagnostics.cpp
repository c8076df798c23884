#include <doctest.h>

#include <cmath>

#include "stmix/diagnostics.hpp"
#include "stmix/error.hpp"
#include "stmix/rng.hpp"

using namespace stmix;

TEST_CASE("white-noise traces calibrate the split R-hat near one") {
  Rng rng(501);
  const Eigen::VectorXd trace = rng.normal_vector(50000);
  const double rhat = split_rhat(trace);
  CHECK(rhat > 0.99);
  CHECK(rhat < 1.01);
  const double ess = effective_sample_size(trace);
  CHECK(ess > 0.5 * 50000);
}

TEST_CASE("a stuck chain is flagged with zero effective draws") {
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(500, 3.25);
  CHECK(effective_sample_size(flat) == 0.0);
  CHECK(std::isinf(split_rhat(flat)));
}

TEST_CASE("AR(1) effective sample size matches the analytic factor") {
  // For x_t = rho x_{t-1} + e_t, ESS/n -> (1 - rho) / (1 + rho) = 1/3.
  Rng rng(502);
  const int n = 60000;
  const double rho = 0.5;
  Eigen::VectorXd trace(n);
  trace[0] = rng.normal();
  for (int i = 1; i < n; ++i)
    trace[i] = rho * trace[i - 1] + std::sqrt(1.0 - rho * rho) * rng.normal();
  const double ess = effective_sample_size(trace);
  const double expected = n * (1.0 - rho) / (1.0 + rho);
  CHECK(std::fabs(ess - expected) < 0.2 * expected);
}

TEST_CASE("diagnostics require enough draws") {
  PosteriorSamples samples;
  samples.draws.resize(10);
  CHECK_THROWS_AS(diagnostics(samples), ArgumentError);
}
