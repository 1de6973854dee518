#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "swhf/phase_flow.hpp"

namespace swhf {

/// phi(x, p) = X(2 pi x / L) * p^m exp(-p^2) with X in {1, sin, cos}. One-dimensional phase space.
struct TestFunction {
  enum class Trig { kOne, kSin, kCos };
  Trig trig = Trig::kOne;
  int power = 0;
  double period = 1.0;

  double value(double x, double p) const;
  double dx(double x, double p) const;
  double dp(double x, double p) const;
  double dpp(double x, double p) const;
  std::string name() const;
};

/// {1, sin, cos} x {p^m e^{-p^2}, m = 0..3}.
std::vector<TestFunction> default_battery(double period);

struct PhaseEnsemble {
  std::vector<PhaseState> particles;
  double time = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t path_id = 0;
};

/// N particles with x uniform on [0, L) and p ~ N(p_mean, p_sd^2), drawn from the sampling stream.
PhaseEnsemble sample_ensemble(std::size_t n, double period, double p_mean, double p_sd, std::uint64_t seed);

struct ConditionalSeries {
  std::vector<PhaseEnsemble> ensembles;
  std::size_t excluded = 0;  ///< particles dropped after a non-finite trajectory
};

/// Every particle follows wz_flow on the one shared mesh; sample times must lie on the substep grid.
ConditionalSeries evolve_conditional(const HamiltonianSpec& spec, const PhaseEnsemble& ensemble0,
                                     const WongZakaiMesh& mesh, int substeps_per_cell,
                                     const std::vector<double>& sample_times, int workers = 1);

struct WeakResidualRow {
  double time = 0.0;
  int phi = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double residual = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Same data with the 1/2 eta^2 Hessian term removed from the right-hand side.
  double ablated = 0.0;
  double ablated_ci_low = 0.0;
  double ablated_ci_high = 0.0;
};

struct WeakResidualTable {
  std::vector<WeakResidualRow> rows;
  std::vector<WeakResidualRow> aggregate;  ///< per phi, averaged over all evaluated times
  std::vector<double> skipped_times;
};

/// Centered d/dt <phi> against <generator phi> along one conditional series (uniform sample times).
WeakResidualTable weak_residual_first_order(const HamiltonianSpec& spec, const ConditionalSeries& series,
                                           const WongZakaiMesh& mesh, const std::vector<TestFunction>& battery);

struct SecondOrderOptions {
  int replications = 30;
  int dt_level = 8;           ///< strat_flow step T * 2^-dt_level
  int sample_stride = 8;      ///< fine steps between sample times
  double horizon = 1.0;
  std::uint64_t seed = 1;
  int workers = 1;
  int bootstrap_resamples = 1000;
  double confidence = 0.95;
  /// Subtracts the left-point sum of the noise term, a zero-mean control variate.
  bool control_variate = true;
};

/// Noise-averaged weak form with the 1/2 eta^2 (grad sigma)^2 d_pp phi term; CIs bootstrap over replications.
WeakResidualTable weak_residual_second_order(const HamiltonianSpec& spec, const PhaseEnsemble& ensemble0,
                                            const std::vector<TestFunction>& battery,
                                            const SecondOrderOptions& options);

/// Columns: time, phi, lhs, rhs, residual, ci_low, ci_high.
void write_residual_csv(const WeakResidualTable& table, const std::vector<TestFunction>& battery, std::ostream& out);

}  // namespace swhf
