#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <tuple>
#include <span>
#include <utility>
#include <vector>

#include "swhf/philox.hpp"

namespace swhf {

struct OrderFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
};

/// Ordinary least squares of log(error) on log(delta). Needs >= 3 points and positive values.
OrderFit fit_order(std::span<const double> delta, std::span<const double> error);

/// Wilson score interval for k successes in n trials.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

/// Linear-interpolated percentile interval of the samples.
std::pair<double, double> percentile_interval(std::vector<double> samples, double confidence);

struct BootstrapSummary {
  double estimate = 0.0;
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap of statistic(resampled values); resamples are drawn from the bootstrap stream of `seed`.
template <typename Statistic>
BootstrapSummary bootstrap(std::span<const double> values, Statistic statistic, int resamples, double confidence,
                           std::uint64_t seed);

/// Bootstrap of the mean.
BootstrapSummary bootstrap_mean(std::span<const double> values, int resamples, double confidence, std::uint64_t seed);

/// Bootstrap of sqrt(mean(values)), for RMS errors from squared per-path errors.
BootstrapSummary bootstrap_rms(std::span<const double> squared, int resamples, double confidence, std::uint64_t seed);


template <typename Statistic>
BootstrapSummary bootstrap(std::span<const double> values, Statistic statistic, int resamples, double confidence,
                           std::uint64_t seed) {
  BootstrapSummary out;
  out.estimate = statistic(values);
  if (resamples <= 0 || values.empty()) {
    out.low = out.high = out.estimate;
    return out;
  }
  const std::size_t n = values.size();
  std::vector<double> stats(resamples), draw(n);
  for (int b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(keyed_uniform(seed, Stream::kBootstrap, static_cast<std::uint32_t>(b), i, 0) * n);
      draw[i] = values[k < n ? k : n - 1];
    }
    stats[b] = statistic(std::span<const double>(draw));
  }
  std::tie(out.low, out.high) = percentile_interval(std::move(stats), confidence);
  return out;
}

}  // namespace swhf


namespace swhf {

struct ConvergenceLevel {
  int delta_level = 0;
  double delta = 0.0;
  double rms = 0.0;  ///< (mean over paths of squared sup errors)^(1/2)
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t failures = 0;
};

struct ConvergenceReport {
  std::string system;
  std::string norm;
  std::vector<ConvergenceLevel> levels;  ///< delta strictly decreasing
  std::optional<OrderFit> fit;
  /// Set when the errors do not depend on delta (no noise), in which case no fit is made.
  bool degenerate = false;
  std::vector<std::vector<double>> per_path;  ///< [path][level]; NaN marks a failed run
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  double horizon = 0.0;
  double dt = 0.0;
  int reference_level = 0;
  std::string spec_hash;

  /// Fraction of paths whose errors decrease strictly with delta.
  double monotone_fraction() const;
  bool strictly_decreasing() const;
};

struct StudyAssembly {
  double degenerate_tolerance = 1e-12;
  /// Errors that do not change with delta (relative spread below this) also mark the study degenerate.
  double flat_tolerance = 1e-9;
  double max_failure_fraction = 0.2;
  int bootstrap_resamples = 1000;
  double confidence = 0.95;
};

/// Aggregates per-path sup errors into RMS levels with bootstrap CIs and a log-log fit.
/// Throws StudyError with a failure census when a level fails on too many paths.
void assemble_report(ConvergenceReport& report, const std::vector<int>& delta_levels,
                     const StudyAssembly& options = {});

/// Columns: delta_level, delta, rms, ci_low, ci_high, failures; fit and metadata as leading comment lines.
void write_convergence_csv(const ConvergenceReport& report, std::ostream& out);

}  // namespace swhf
