#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stmix/sampler.hpp"

namespace stmix {

struct ChainSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double ess = 0.0;
  double psrf = 1.0;
};

// Effective sample size via Geyer's initial positive sequence; a (numerically)
// constant trace reports zero.
double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& trace);

// Split-chain potential scale reduction (the trace split into two halves);
// infinity for a constant trace.
double split_rhat(const Eigen::Ref<const Eigen::VectorXd>& trace);

// Per-parameter summaries over all stored scalar traces. Requires >= 100 draws.
std::vector<ChainSummary> diagnostics(const PosteriorSamples& samples);

void write_diagnostics_csv(const std::vector<ChainSummary>& rows,
                           const std::filesystem::path& path);

}  // namespace stmix
