#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "swhf/grid.hpp"
#include "swhf/phase_flow.hpp"

namespace swhf {

inline constexpr double kDensityFloor = 1e-10;

/// Initial momentum field p0 = v0(x0) with its Jacobian.
struct InitialVelocity {
  std::function<void(const Vec&, Eigen::Ref<Vec>)> value;
  std::function<void(const Vec&, Eigen::Ref<Mat>)> jacobian;

  static InitialVelocity zero();
  static InitialVelocity constant(Vec c);
};

struct PushforwardOptions {
  int workers = 1;
  double det_threshold = kDefaultDetThreshold;
  double newton_tolerance = 1e-12;
  int newton_max_iterations = 60;
  FlowOptions flow;
  /// Evaluates rho0 off-grid; trigonometric interpolation of the grid values when empty.
  std::function<double(double)> rho0_function;
};

struct PushforwardResult {
  DensityField density;
  std::vector<double> preimages;  ///< x0(y) per node
  std::vector<double> momentum;   ///< p_t at the preimage trajectory, i.e. the transported velocity
  double renormalization = 1.0;   ///< factor applied to reach unit mass
};

/// rho_t(y) = rho0(x0(y)) / |d x_t / d x0| with x0(y) the preimage of node y. One-dimensional grids.
PushforwardResult pushforward_jacobian(const HamiltonianSpec& spec, const DensityField& rho0,
                                       const InitialVelocity& v0, const FlowDriver& driver, double t,
                                       const PushforwardOptions& options = {});

struct MonteCarloOptions {
  int workers = 1;
  int bootstrap_resamples = 1000;
  double rejection_efficiency_floor = 1e-3;
  FlowOptions flow;
};

struct MonteCarloDensity {
  DensityField density;
  std::vector<double> standard_error;  ///< per node, binomial
  double l1_standard_error = 0.0;      ///< RMS bootstrap L1 deviation of the histogram
  std::size_t outside = 0;             ///< particles leaving a non-periodic window
};

/// Samples x0 from the piecewise-constant reading of rho0 (inverse CDF in 1D, rejection in 2D),
/// pushes every particle through the same driver and histograms at nearest nodes.
MonteCarloDensity pushforward_mc(const HamiltonianSpec& spec, const DensityField& rho0, const InitialVelocity& v0,
                                 const FlowDriver& driver, double t, std::size_t particles, std::uint64_t seed,
                                 const MonteCarloOptions& options = {});

double l1_distance(const GridSpec& grid, std::span<const double> a, std::span<const double> b);

struct EllipticOptions {
  double density_floor = kDensityFloor;
  double tolerance = 1e-10;
  int max_iterations = 5000;
  double gauge_tolerance = 1e-10;
};

struct EllipticResult {
  PotentialField phi;
  int iterations = 0;
  double relative_residual = 0.0;
};

/// -div(rho grad Phi) = kappa, conservative centered differences, zero-mean Phi.
EllipticResult elliptic_solve(const DensityField& rho, std::span<const double> kappa,
                              const EllipticOptions& options = {});

/// The discrete operator -div(rho grad .) used by elliptic_solve.
std::vector<double> weighted_laplacian(const DensityField& rho, std::span<const double> phi);

/// g_W(k1, k2) = sum over faces of rho_face * dPhi1 * dPhi2 with Phi_i = elliptic_solve(rho, k_i).
double wasserstein_metric(const DensityField& rho, std::span<const double> kappa1, std::span<const double> kappa2,
                          const EllipticOptions& options = {});

struct FisherResult {
  double information = 0.0;
  std::vector<double> bohm;          ///< -4 lap(sqrt rho) / sqrt rho
  std::vector<double> bohm_log_form; ///< |grad log rho|^2 - 2 lap(rho) / rho
  double form_discrepancy = 0.0;     ///< sup |bohm - bohm_log_form|
};

FisherResult fisher_and_bohm(const DensityField& rho, double floor = kDensityFloor);

/// Functional derivative delta F / delta rho as a node field.
using FunctionalDerivative = std::function<std::vector<double>(const DensityField&)>;

/// F(rho) = int f rho.
FunctionalDerivative linear_functional(const GridSpec& grid, const std::function<double(double)>& f);

struct WhfSpec {
  FunctionalDerivative d_potential;  ///< delta F / delta rho, zero if empty
  FunctionalDerivative d_noise;      ///< delta Sigma / delta rho, zero if empty
  double eta = 0.0;
};

struct ElResidual {
  std::vector<double> times;
  std::vector<double> continuity;
  std::vector<double> hamilton_jacobi;
  std::vector<char> skipped;  ///< stencil straddles a WZ node
  double sup_continuity = 0.0;
  double sup_hamilton_jacobi = 0.0;
};

/// Dual-form Euler-Lagrange residual of a density series on uniform times t0 + k dt.
ElResidual el_residual(const std::vector<DensityField>& series, double t0, double dt, const WhfSpec& spec,
                       const std::optional<WongZakaiMesh>& mesh = std::nullopt, const EllipticOptions& elliptic = {});

enum class WhfForm { kPotential, kVelocity };

struct WhfState {
  DensityField rho;
  std::vector<double> field;  ///< Phi (potential form) or v (velocity form)
  WhfForm form = WhfForm::kPotential;
  double t = 0.0;
};

struct WhfStepReport {
  double clipped_mass = 0.0;  ///< L1 size of the positivity correction
  double max_dt = 0.0;        ///< stability bound at the start of the step (inf if none)
  double mass_before_renormalization = 1.0;
};

/// One RK4 step of the generalized Wong-Zakai Wasserstein Hamiltonian flow with noise slope xi_dot.
WhfState generalized_whf_step(const WhfState& state, const WhfSpec& spec, double xi_dot, double dt,
                              WhfStepReport* report = nullptr, double floor = kDensityFloor);

/// RK4-stable step bound 2.8 h / (pi max|(1 + eta xi_dot) u|) for the advecting speed u.
double whf_stable_dt(const WhfState& state, const WhfSpec& spec, double xi_dot);

/// Repeated steps of size dt on [t0, t0 + steps*dt]; every `stride`-th state is kept.
/// With a mesh, steps must not straddle WZ nodes.
std::vector<WhfState> whf_evolve(const WhfState& state0, const WhfSpec& spec,
                                 const std::optional<WongZakaiMesh>& mesh, double dt, int steps, int stride = 1);

/// int 1/2 |grad Phi|^2 rho (potential form) or int 1/2 v^2 rho.
double whf_kinetic_energy(const WhfState& state);

struct ContinuityResidual {
  std::vector<double> times;
  std::vector<double> residual;  ///< max over the test battery
};

/// |d/dt int psi rho - int grad psi . v rho| for trigonometric psi, centered in time.
ContinuityResidual continuity_residual(const std::vector<DensityField>& rho, const std::vector<VelocityField>& v,
                                       double t0, double dt);

}  // namespace swhf
