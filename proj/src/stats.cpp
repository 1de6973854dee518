#include "swhf/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "swhf/errors.hpp"

namespace swhf {

OrderFit fit_order(std::span<const double> delta, std::span<const double> error) {
  if (delta.size() != error.size()) throw ConfigError("fit_order: mismatched point lists");
  if (delta.size() < 3) throw InsufficientDataError("fit_order needs at least 3 points");
  const std::size_t n = delta.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(delta[i] > 0.0) || !(error[i] > 0.0)) throw DomainError("fit_order: deltas and errors must be positive");
    x[i] = std::log(delta[i]);
    y[i] = std::log(error[i]);
  }
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_order: deltas must not all coincide");
  OrderFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    ss += r * r;
  }
  fit.stderr_slope = std::sqrt(ss / static_cast<double>(n - 2) / sxx);
  return fit;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) throw InsufficientDataError("wilson_interval: no trials");
  const double n = static_cast<double>(trials);
  const double p = successes / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::pair<double, double> percentile_interval(std::vector<double> v, double confidence) {
  if (v.empty()) throw InsufficientDataError("percentile_interval: no samples");
  std::sort(v.begin(), v.end());
  const double a = 0.5 * (1.0 - confidence);
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {at(a), at(1.0 - a)};
}

namespace {

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

BootstrapSummary bootstrap_mean(std::span<const double> values, int resamples, double confidence, std::uint64_t seed) {
  return bootstrap(values, mean_of, resamples, confidence, seed);
}

BootstrapSummary bootstrap_rms(std::span<const double> squared, int resamples, double confidence, std::uint64_t seed) {
  return bootstrap(squared, [](std::span<const double> v) { return std::sqrt(mean_of(v)); }, resamples, confidence,
                   seed);
}

}  // namespace swhf

namespace swhf {

double ConvergenceReport::monotone_fraction() const {
  if (per_path.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& row : per_path) {
    bool mono = true;
    for (std::size_t i = 1; i < row.size(); ++i)
      if (!(row[i] < row[i - 1])) mono = false;
    ok += mono;
  }
  return static_cast<double>(ok) / static_cast<double>(per_path.size());
}

bool ConvergenceReport::strictly_decreasing() const {
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i].rms < levels[i - 1].rms)) return false;
  return !levels.empty();
}

void assemble_report(ConvergenceReport& report, const std::vector<int>& delta_levels, const StudyAssembly& options) {
  const std::size_t L = delta_levels.size();
  for (std::size_t i = 1; i < L; ++i)
    if (delta_levels[i] <= delta_levels[i - 1]) throw ConfigError("delta levels must increase strictly");
  report.replications = report.per_path.size();
  report.levels.assign(L, {});
  std::string census;
  for (std::size_t l = 0; l < L; ++l) {
    auto& lv = report.levels[l];
    lv.delta_level = delta_levels[l];
    lv.delta = report.horizon * std::ldexp(1.0, -delta_levels[l]);
    std::vector<double> sq;
    for (const auto& row : report.per_path) {
      if (row.size() != L) throw ConfigError("per-path error rows must have one entry per level");
      if (std::isfinite(row[l]))
        sq.push_back(row[l] * row[l]);
      else
        ++lv.failures;
    }
    if (static_cast<double>(lv.failures) > options.max_failure_fraction * static_cast<double>(report.replications))
      census += " level " + std::to_string(delta_levels[l]) + ": " + std::to_string(lv.failures) + "/" +
                std::to_string(report.replications) + " failed;";
    if (sq.empty()) continue;
    const auto b = bootstrap_rms(sq, options.bootstrap_resamples, options.confidence, derive_seed(report.seed, l));
    lv.rms = b.estimate;
    lv.ci_low = b.low;
    lv.ci_high = b.high;
  }
  if (!census.empty()) throw StudyError("convergence study failure census:" + census);

  double lo = report.levels.front().rms, hi = lo;
  for (const auto& lv : report.levels) {
    lo = std::min(lo, lv.rms);
    hi = std::max(hi, lv.rms);
  }
  report.degenerate = hi <= options.degenerate_tolerance || hi - lo <= options.flat_tolerance * hi;
  report.fit.reset();
  if (report.degenerate) return;
  if (L < 3) throw InsufficientDataError("convergence study needs at least 3 delta levels");
  std::vector<double> d, e;
  for (const auto& lv : report.levels) {
    d.push_back(lv.delta);
    e.push_back(lv.rms);
  }
  report.fit = fit_order(d, e);
}

void write_convergence_csv(const ConvergenceReport& r, std::ostream& out) {
  out.precision(17);
  out << "# system=" << r.system << " norm=" << r.norm << " replications=" << r.replications << " seed=" << r.seed
      << " horizon=" << r.horizon << " dt=" << r.dt << " reference_level=" << r.reference_level
      << " spec_hash=" << r.spec_hash << "\n";
  if (r.fit)
    out << "# slope=" << r.fit->slope << " intercept=" << r.fit->intercept << " stderr=" << r.fit->stderr_slope
        << "\n";
  else if (r.degenerate)
    out << "# fit=none reason=no-noise\n";
  out << "delta_level,delta,rms,ci_low,ci_high,failures\n";
  for (const auto& lv : r.levels)
    out << lv.delta_level << ',' << lv.delta << ',' << lv.rms << ',' << lv.ci_low << ',' << lv.ci_high << ','
        << lv.failures << "\n";
}

}  // namespace swhf
