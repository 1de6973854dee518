#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "swhf/grid.hpp"
#include "swhf/noise.hpp"
#include "swhf/stats.hpp"

namespace swhf {

/// Complex wave on a 1D periodic grid.
struct WaveField {
  GridSpec grid;
  std::vector<cplx> values;

  /// h * sum |u|^2.
  double mass() const;
};

WaveField wave_from(const GridSpec& grid, const std::function<cplx(double)>& u);

/// Real nonlinearity f(s), its primitive F(r) = int_0^r f, and a local Lipschitz bound L_f(R).
struct Nonlinearity {
  std::function<double(double)> f;
  std::function<double(double)> primitive;
  std::function<double(double)> lipschitz;

  static Nonlinearity cubic();  ///< f(s) = s
  static Nonlinearity none();
};

enum class NlsDriver { kNone, kWzPotential, kStratPotential, kWhiteDispersion, kRandomDispersion };

/// du = i lap u dt + i lambda f(|u|^2) u dt + i u dW for the potential drivers; the dispersion drivers
/// put the noise on the Laplacian instead.
struct NlsSpec {
  GridSpec grid;
  double lambda = 0.0;
  Nonlinearity nonlinearity = Nonlinearity::cubic();
  NlsDriver driver = NlsDriver::kNone;
  WienerField field;   ///< potential drivers
  int delta_level = 0; ///< WZ level; kStratPotential uses the path's own level
  std::shared_ptr<const BrownianPath> dispersion_path;    ///< white dispersion, sigma_0 = 1
  std::shared_ptr<const DispersionDriver> dispersion;     ///< random dispersion

  void validate() const;
  /// Interpolation level actually used by the potential drivers.
  int effective_delta_level() const;
};

/// One Strang step. For WZ potentials [t, t + dt] must lie inside one cell.
WaveField nls_step(const NlsSpec& spec, const WaveField& u, double t, double dt);

/// H(u) = int 1/2 |grad u|^2 - lambda/2 int F(|u|^2).
double nls_energy(const NlsSpec& spec, const WaveField& u);

struct NlsSeries {
  std::vector<double> times;
  std::vector<WaveField> waves;
  std::vector<double> mass;
  std::vector<double> energy;
};

/// Steps from t = 0 to T with step dt, sampling every `stride` steps (and at t = 0).
NlsSeries nls_evolve(const NlsSpec& spec, const WaveField& u0, double horizon, double dt, int stride = 1);

struct MadelungComponent {
  std::size_t begin = 0;   ///< first node (periodic)
  std::size_t length = 0;
  std::size_t anchor = 0;  ///< argmax rho inside the component
};

struct MadelungFields {
  GridSpec grid;
  std::vector<double> rho;
  std::vector<double> phase;  ///< unwrapped S on the mask, 0 elsewhere
  std::vector<char> mask;
  std::vector<MadelungComponent> components;
  int winding = 0;  ///< nonzero only when the mask covers the whole torus
  double raw_mass = 0.0;
};

/// rho = |u|^2 and a phase unwrapped from each component's argmax; threshold relative to max rho.
MadelungFields madelung(const WaveField& u, double support_threshold = 1e-6);

struct MadelungResidual {
  std::vector<double> times;
  std::vector<double> continuity;  ///< sup on the mask of d_t rho + 2 div(rho grad S)
  std::vector<double> phase;       ///< sup on the mask of the zero-mean projected S-equation residual
  std::vector<double> skipped;
  double sup_continuity = 0.0;
  double sup_phase = 0.0;
};

/// Centered in time, spectral in space, on uniformly spaced waves starting at t0.
MadelungResidual madelung_residual(const NlsSpec& spec, const std::vector<WaveField>& waves, double t0, double dt,
                                   double support_threshold = 1e-6);

struct NlsStudyOptions {
  std::vector<int> delta_levels{3, 4, 5, 6, 7};
  int reference_offset = 3;  ///< reference level = finest + offset
  int substeps = 1;          ///< time steps per reference cell
  double horizon = 1.0;
  std::size_t replications = 50;
  std::uint64_t seed = 1;
  int workers = 1;
  int bootstrap_resamples = 1000;
};

/// Coupled WZ runs at every level against the finest-delta reference on the same paths.
/// The field's paths are replaced per replication; errors are sup over time steps of the L2 distance.
ConvergenceReport nls_convergence_study(const NlsSpec& spec, const WaveField& u0, const NlsStudyOptions& options);

/// Columns: x, re, im, rho, S.
void write_wave_csv(const WaveField& u, std::ostream& out, double support_threshold = 1e-6);
/// Magic "SWHFWAVE", f64 period, f64 origin, u32 n, then n pairs of f64 (re, im).
void write_wave_binary(const WaveField& u, std::ostream& out);
WaveField read_wave_binary(std::istream& in);

}  // namespace swhf
