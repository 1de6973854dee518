#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "swhf/noise.hpp"

namespace swhf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Scalar function on configuration space with gradient and optional Hessian.
struct ScalarPotential {
  std::function<double(const Vec&)> value;
  std::function<void(const Vec&, Eigen::Ref<Vec>)> gradient;
  std::function<void(const Vec&, Eigen::Ref<Mat>)> hessian;

  static ScalarPotential zero();
  /// Sum of per-coordinate 1D functions, phi(x) = sum_i h(x_i).
  static ScalarPotential separable(std::function<double(double)> h, std::function<double(double)> dh,
                                   std::function<double(double)> d2h);
  /// 1/2 x^T K x + b^T x.
  static ScalarPotential quadratic(Mat k, Vec b);
  bool has_hessian() const { return static_cast<bool>(hessian); }
};

/// Inverse metric G(x) = g(x)^{-1}. Identity unless callables are supplied.
struct InverseMetric {
  enum class Kind { kIdentity, kDiagonal, kFull };
  Kind kind = Kind::kIdentity;
  std::function<void(const Vec&, Eigen::Ref<Mat>)> value;
  /// Fills dG[i] = dG/dx_i.
  std::function<void(const Vec&, std::vector<Mat>&)> derivative;
  /// Fills d2G[i*d+j] = d^2 G / dx_i dx_j. Needed for variational flows only.
  std::function<void(const Vec&, std::vector<Mat>&)> second_derivative;

  static InverseMetric identity() { return {}; }
  /// Diagonal metric g = diag(m_i(x_i)), supplied through m, m' and m''.
  static InverseMetric diagonal(std::function<double(double)> m, std::function<double(double)> dm,
                                std::function<double(double)> d2m);
  /// Full symmetric metric g(x) with derivatives dg[i] (and optional d2g); inverted internally.
  static InverseMetric from_metric(std::function<void(const Vec&, Eigen::Ref<Mat>)> g,
                                   std::function<void(const Vec&, std::vector<Mat>&)> dg,
                                   std::function<void(const Vec&, std::vector<Mat>&)> d2g = {});
  bool is_identity() const { return kind == Kind::kIdentity; }
};

struct Domain {
  bool torus = false;
  Vec period;  ///< per-coordinate period when torus

  static Domain euclidean() { return {}; }
  static Domain flat_torus(Vec period) { return {true, std::move(period)}; }
};

/// H0 = 1/2 p^T g^{-1}(x) p + f(x);
/// H1 = eta sigma(x), or eta (1/2 p^T gt^{-1}(x) p + sigma(x)) when a noise metric gt is set.
struct HamiltonianSpec {
  int dim = 1;
  InverseMetric metric;
  ScalarPotential potential = ScalarPotential::zero();
  ScalarPotential noise_potential = ScalarPotential::zero();
  double eta = 0.0;
  std::optional<InverseMetric> noise_metric;
  Domain domain;

  void validate() const;
  bool has_hessians() const;
};

struct PhaseState {
  Vec x;
  Vec p;
  double t = 0.0;
};

struct HamiltonianEval {
  double h0 = 0.0;
  double h1 = 0.0;
  Vec dx_h0, dp_h0, dx_h1, dp_h1;
};

HamiltonianEval hamiltonian_eval(const HamiltonianSpec& spec, const PhaseState& state);

enum class FlowStatusKind { kCompleted, kDiffeoLost, kNonFinite };

struct FlowStatus {
  FlowStatusKind kind = FlowStatusKind::kCompleted;
  double time = 0.0;  ///< when the status was raised
};

/// Sampled trajectory. Positions on a torus are stored in the fundamental cell.
struct FlowResult {
  int dim = 0;
  std::vector<double> times;
  std::vector<Vec> x;
  std::vector<Vec> p;
  /// Full 2d x 2d tangent maps d(x,p)/d(x0,p0); empty unless requested.
  std::vector<Mat> jacobian;
  std::vector<double> h0;
  std::vector<double> h1;
  FlowStatus status;

  Mat jxx(std::size_t i) const { return jacobian[i].topLeftCorner(dim, dim); }
  Mat jxp(std::size_t i) const { return jacobian[i].topRightCorner(dim, dim); }
  Mat jpx(std::size_t i) const { return jacobian[i].bottomLeftCorner(dim, dim); }
  Mat jpp(std::size_t i) const { return jacobian[i].bottomRightCorner(dim, dim); }
  bool completed() const { return status.kind == FlowStatusKind::kCompleted; }
};

enum class StratScheme {
  kHeun,  ///< predictor-corrector, Stratonovich-consistent, default
  kAvf,   ///< averaged vector field (discrete gradient); conserves H0 exactly when {H0,H1}=0
};

struct FlowOptions {
  int record_stride = 1;        ///< record every n-th step (end time always recorded)
  bool jacobians = false;       ///< integrate the first-variation system alongside
  int noise_component = 0;      ///< component of the Brownian path driving H1
  std::optional<double> end_time;
  StratScheme scheme = StratScheme::kHeun;
  double implicit_tolerance = 1e-14;
  int implicit_max_iterations = 200;
};

/// Wong-Zakai system xdot = dpH0 + dpH1 xi', pdot = -dxH0 - dxH1 xi' with RK4 inside each cell.
FlowResult wz_flow(const HamiltonianSpec& spec, const PhaseState& state0, const WongZakaiMesh& mesh,
                   int substeps_per_cell, const FlowOptions& options = {});

/// Stratonovich limit on the grid of width T*2^-dt_level, increments read off `path`.
FlowResult strat_flow(const HamiltonianSpec& spec, const PhaseState& state0, const BrownianPath& path, int dt_level,
                      const FlowOptions& options = {});

struct WzDriver {
  WongZakaiMesh mesh;
  int substeps_per_cell = 1;
};
struct StratDriver {
  std::shared_ptr<const BrownianPath> path;
  int dt_level = 0;
};
using FlowDriver = std::variant<WzDriver, StratDriver>;

double driver_horizon(const FlowDriver& driver);

/// Base flow plus tangent maps at every recorded time; J(0) = identity.
FlowResult variational_flow(const HamiltonianSpec& spec, const PhaseState& state0, const FlowDriver& driver,
                            FlowOptions options = {});

/// Runs whichever flow the driver selects.
FlowResult run_flow(const HamiltonianSpec& spec, const PhaseState& state0, const FlowDriver& driver,
                    const FlowOptions& options = {});

inline constexpr double kDefaultDetThreshold = 1e-3;

/// First recorded time with det(dx_t/dx0 + dx_t/dp0 * dv0) <= threshold.
/// `initial_velocity_jacobian` is dv0/dx0 for flows started from p0 = v0(x0); zero by default.
std::optional<double> diffeo_loss_time(const FlowResult& result, double det_threshold = kDefaultDetThreshold,
                                       const std::optional<Mat>& initial_velocity_jacobian = std::nullopt);

struct GrowthReport {
  double max_ratio = 0.0;
  std::size_t argmax = 0;
  PhaseState argmax_state;
  std::vector<double> lhs;    ///< summed noise-interaction terms per sample
  std::vector<double> bound;  ///< C1 + c1 H0 per sample
};

/// Evaluates the growth-condition terms against C1 + c1 H0 at the sample states.
GrowthReport growth_diagnostic(const HamiltonianSpec& spec, const std::vector<PhaseState>& samples, double c1_const,
                               double c1_slope);

struct EnergyExpansionReport {
  double sup_residual = 0.0;
  std::vector<double> times;
  std::vector<double> residual;
};

/// Residual of H0(t) - H0(0) - int_0^t {H0,H1} xi' ds on a wz_flow result recorded at every substep.
EnergyExpansionReport energy_expansion_check(const HamiltonianSpec& spec, const FlowResult& result,
                                             const WongZakaiMesh& mesh, int noise_component = 0);

/// Smallest eigenvalue range of g over sample points, for the equivalence-to-identity check.
std::pair<double, double> metric_eigen_bounds(const InverseMetric& metric, int dim, const std::vector<Vec>& samples);

/// CSV columns: t, x0..x{d-1}, p0..p{d-1}, H0, H1.
void write_trajectory_csv(const FlowResult& result, std::ostream& out);
/// Binary: magic "SWHFTRAJ", u32 dim, u64 samples, then per sample t, x, p, H0, H1 as f64.
void write_trajectory_binary(const FlowResult& result, std::ostream& out);
FlowResult read_trajectory_binary(std::istream& in);

}  // namespace swhf
