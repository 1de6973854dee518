#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "swhf/grid.hpp"
#include "swhf/noise.hpp"
#include "swhf/wasserstein.hpp"

namespace swhf {

/// Fisher-regularized Hamiltonian system with a scalar common-noise coupling a(x) on a 1D torus:
///   d_t rho = -div(rho grad Phi) - div(rho a) xi'
///   d_t Phi = -1/2 |grad Phi|^2 - grad Phi a xi' + nu^2/2 dI/drho + nu a' xi'
/// Its Hopf-Cole image S = Phi + nu log rho solves the forward-backward pair with diffusion nu.
struct BridgeSpec {
  GridSpec grid;
  std::function<double(double)> a;   ///< empty means no common noise
  std::function<double(double)> da;
  WongZakaiMesh mesh;                ///< ignored when mesh.base is null
  DensityField rho0;
  PotentialField phi0;
  double nu = 0.5;                   ///< 1/2, or 1 for the Delta rho convention
  bool divergence_correction = true; ///< include nu a' xi' in the Phi equation
  double floor = kDensityFloor;

  void validate() const;
  bool noisy() const { return a && mesh.base != nullptr; }
};

struct BridgeState {
  DensityField rho;
  PotentialField phi;
  double t = 0.0;
};

struct HopfCole {
  PotentialField field;  ///< zero mean
  double offset = 0.0;   ///< mean removed by the projection
};

/// Phi = S - nu log rho, projected to zero mean.
HopfCole hopf_cole(const DensityField& rho, const PotentialField& s, double nu = 0.5, double floor = kDensityFloor);
/// S = Phi + nu log rho, projected to zero mean.
HopfCole hopf_cole_inverse(const DensityField& rho, const PotentialField& phi, double nu = 0.5,
                           double floor = kDensityFloor);

/// H0 = 1/2 int |grad Phi|^2 rho - nu^2/2 I(rho).
double bridge_hamiltonian(const BridgeState& state, double nu = 0.5);

/// Largest RK4-stable step: advection 2.8 / (k_max c) and the real Fisher eigenvalues 2.78 / (nu k_max^2),
/// with k_max the largest retained wavenumber.
double bridge_stable_dt(const BridgeState& state, const BridgeSpec& spec, double xi_dot);

/// exp(nu k_max^2 T): amplification of the fastest retained mode over T (the system is ill-posed at high modes).
double bridge_growth_bound(const BridgeSpec& spec, double horizon);

struct BridgeSeries {
  std::vector<double> times;
  std::vector<BridgeState> states;
  std::vector<double> hamiltonian;
  double max_mass_drift = 0.0;   ///< relative, before any renormalization
  double clipped_mass = 0.0;     ///< total mass added by the floor
  double max_gauge_offset = 0.0; ///< largest mean removed from Phi in one step
  double growth_bound = 1.0;
};

/// RK4 with spectral derivatives and dealiased right-hand sides; steps must not straddle WZ nodes.
/// Throws StabilityError (suggesting 0.9 of the bound) when dt exceeds bridge_stable_dt.
BridgeSeries bridge_flow(const BridgeSpec& spec, double horizon, double dt, int stride = 1);

struct FbResidual {
  std::vector<double> times;
  std::vector<double> forward;   ///< d_t rho + div(rho (grad S + a xi')) - nu lap rho
  std::vector<double> backward;  ///< zero-mean part of d_t S + 1/2 |grad S|^2 + grad S a xi' + nu lap S
  std::vector<double> skipped;
  double sup_forward = 0.0;
  double sup_backward = 0.0;
};

/// Residuals of the forward-backward pair on a uniformly spaced series (centered in time).
FbResidual fb_residual(const BridgeSpec& spec, const std::vector<BridgeState>& states, double t0, double dt);

/// Columns: t, x, rho, Phi, S.
void write_bridge_csv(const BridgeSeries& series, double nu, std::ostream& out);

}  // namespace swhf
