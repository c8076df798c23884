#include "stmix/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "stmix/error.hpp"

namespace stmix {

namespace {

double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
}

}  // namespace

double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& trace) {
  const Eigen::Index n = trace.size();
  if (n < 4) throw ArgumentError("trace too short for an ESS estimate");
  const double mean = trace.mean();
  const Eigen::ArrayXd centered = trace.array() - mean;
  const double c0 = centered.square().sum() / static_cast<double>(n);
  if (!(c0 > 0.0) || !std::isfinite(c0)) return 0.0;  // flat trace: flagged as zero

  // Sum of paired autocovariances while the pairs stay positive (Geyer).
  double tau = c0;  // will become c0 * (1 + 2 sum rho)
  for (Eigen::Index lag = 1; lag + 1 < n; lag += 2) {
    double g1 = 0.0, g2 = 0.0;
    for (Eigen::Index i = 0; i + lag < n; ++i) g1 += centered[i] * centered[i + lag];
    for (Eigen::Index i = 0; i + lag + 1 < n; ++i) g2 += centered[i] * centered[i + lag + 1];
    g1 /= static_cast<double>(n);
    g2 /= static_cast<double>(n);
    const double pair = g1 + g2;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return static_cast<double>(n) * c0 / tau;
}

double split_rhat(const Eigen::Ref<const Eigen::VectorXd>& trace) {
  const Eigen::Index n = trace.size();
  if (n < 4) throw ArgumentError("trace too short for split R-hat");
  const Eigen::Index half = n / 2;
  const Eigen::VectorXd a = trace.head(half);
  const Eigen::VectorXd b = trace.segment(n - half, half);
  const double wa = sample_variance(a);
  const double wb = sample_variance(b);
  const double w = 0.5 * (wa + wb);
  if (!(w > 0.0)) return std::numeric_limits<double>::infinity();
  const double mean_a = a.mean();
  const double mean_b = b.mean();
  const double grand = 0.5 * (mean_a + mean_b);
  const double between = static_cast<double>(half) *
                         ((mean_a - grand) * (mean_a - grand) + (mean_b - grand) * (mean_b - grand));
  const double var_plus =
      (static_cast<double>(half - 1) * w + between) / static_cast<double>(half);
  return std::sqrt(var_plus / w);
}

std::vector<ChainSummary> diagnostics(const PosteriorSamples& samples) {
  if (samples.size() < 100) throw ArgumentError("diagnostics need at least 100 retained draws");
  std::vector<ChainSummary> rows;
  for (const auto& [name, trace] : scalar_traces(samples)) {
    ChainSummary row;
    row.name = name;
    row.mean = trace.mean();
    row.sd = std::sqrt(sample_variance(trace));
    row.ess = effective_sample_size(trace);
    row.psrf = split_rhat(trace);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_diagnostics_csv(const std::vector<ChainSummary>& rows,
                           const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "parameter,mean,sd,ess,psrf\n";
  for (const ChainSummary& row : rows)
    os << row.name << ',' << row.mean << ',' << row.sd << ',' << row.ess << ',' << row.psrf
       << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace stmix
