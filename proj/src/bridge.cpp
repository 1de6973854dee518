#include "swhf/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "swhf/errors.hpp"

namespace swhf {

void BridgeSpec::validate() const {
  grid.validate();
  if (grid.dim != 1) throw ConfigError("bridge: one-dimensional grids only");
  if (!(rho0.grid == grid) || rho0.values.size() != grid.size()) throw ConfigError("bridge: rho0 grid mismatch");
  if (!(phi0.grid == grid) || phi0.values.size() != grid.size()) throw ConfigError("bridge: phi0 grid mismatch");
  if (!(nu > 0.0)) throw ConfigError("bridge: nu must be positive");
  if (static_cast<bool>(a) != static_cast<bool>(da)) throw ConfigError("bridge: coupling needs both a and a'");
  for (double r : rho0.values)
    if (!(r >= floor)) throw SupportError("bridge: rho0 falls below the floor");
}

namespace {

std::vector<double> log_density(const DensityField& rho, double floor) {
  std::vector<double> l(rho.values.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (!(rho.values[i] >= floor)) throw SupportError("hopf_cole: density below the floor");
    l[i] = std::log(rho.values[i]);
  }
  return l;
}

HopfCole shift(const DensityField& rho, const PotentialField& f, double nu, double floor, double sign) {
  if (!(f.grid == rho.grid) || f.values.size() != rho.values.size()) throw ConfigError("hopf_cole: grid mismatch");
  const auto l = log_density(rho, floor);
  HopfCole out{f, 0.0};
  for (std::size_t i = 0; i < l.size(); ++i) out.field.values[i] += sign * nu * l[i];
  out.offset = out.field.project_zero_mean();
  return out;
}

struct Rhs {
  std::vector<double> rho, phi;
};

Rhs bridge_rhs(const Spectral& sp, const BridgeSpec& spec, const std::vector<double>& a,
               const std::vector<double>& da, const std::vector<double>& rho, const std::vector<double>& phi,
               double xi) {
  const std::size_t n = rho.size();
  const auto dphi = sp.derivative(phi, 0);
  std::vector<double> l(n), flux(n), hj(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = std::log(std::max(rho[i], spec.floor));
  const auto dl = sp.derivative(l, 0);
  const auto lap_l = sp.laplacian(l);
  const double nu2 = spec.nu * spec.nu;
  for (std::size_t i = 0; i < n; ++i) {
    const double drift = dphi[i] + (a.empty() ? 0.0 : a[i] * xi);
    flux[i] = rho[i] * drift;
    const double fisher = -2.0 * lap_l[i] - dl[i] * dl[i];
    hj[i] = -0.5 * dphi[i] * dphi[i] + 0.5 * nu2 * fisher;
    if (!a.empty()) {
      hj[i] -= dphi[i] * a[i] * xi;
      if (spec.divergence_correction) hj[i] += spec.nu * da[i] * xi;
    }
  }
  Rhs r;
  r.rho = sp.dealias(sp.derivative(flux, 0));
  for (double& v : r.rho) v = -v;
  r.phi = sp.dealias(hj);
  return r;
}

double k_max(const Spectral& sp) {
  double k = 0.0;
  const auto& keep = sp.dealias_mask();
  const auto& kx = sp.k_axis(0);
  for (std::size_t j = 0; j < kx.size(); ++j)
    if (keep[j]) k = std::max(k, std::abs(kx[j]));
  return k;
}

std::vector<double> nodes_of(const std::function<double(double)>& f, const GridSpec& g) {
  std::vector<double> v;
  if (!f) return v;
  for (double x : g.axis_nodes()) v.push_back(f(x));
  return v;
}

}  // namespace

HopfCole hopf_cole(const DensityField& rho, const PotentialField& s, double nu, double floor) {
  return shift(rho, s, nu, floor, -1.0);
}

HopfCole hopf_cole_inverse(const DensityField& rho, const PotentialField& phi, double nu, double floor) {
  return shift(rho, phi, nu, floor, 1.0);
}

double bridge_hamiltonian(const BridgeState& state, double nu) {
  const Spectral sp(state.rho.grid);
  const auto dphi = sp.derivative(state.phi.values, 0);
  double kin = 0.0;
  for (std::size_t i = 0; i < dphi.size(); ++i) kin += 0.5 * dphi[i] * dphi[i] * state.rho.values[i];
  kin *= state.rho.grid.cell_volume();
  return kin - 0.5 * nu * nu * fisher_and_bohm(state.rho, 0.0).information;
}

double bridge_stable_dt(const BridgeState& state, const BridgeSpec& spec, double xi_dot) {
  const Spectral sp(spec.grid);
  const double k = k_max(sp);
  const auto dphi = sp.derivative(state.phi.values, 0);
  double c = sup_norm(dphi);
  if (spec.a) {
    double amax = 0.0;
    for (double x : spec.grid.axis_nodes()) amax = std::max(amax, std::abs(spec.a(x)));
    c += amax * std::abs(xi_dot);
  }
  const double fisher = 2.78 / (spec.nu * k * k);
  return c > 0.0 ? std::min(fisher, 2.8 / (k * c)) : fisher;
}

double bridge_growth_bound(const BridgeSpec& spec, double horizon) {
  const double k = k_max(Spectral(spec.grid));
  return std::exp(spec.nu * k * k * horizon);
}

BridgeSeries bridge_flow(const BridgeSpec& spec, double horizon, double dt, int stride) {
  spec.validate();
  if (!(horizon > 0.0) || !(dt > 0.0) || stride < 1) throw ConfigError("bridge_flow: bad horizon, dt or stride");
  const double ratio = horizon / dt;
  const auto steps = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-9 * std::max(1.0, ratio))
    throw ConfigError("bridge_flow: horizon must be a multiple of dt");
  const bool noisy = spec.noisy();
  if (noisy) {
    const double cells = spec.mesh.delta() / dt;
    if (std::abs(cells - std::round(cells)) > 1e-9 * std::max(1.0, cells))
      throw ConfigError("bridge_flow: steps straddle Wong-Zakai nodes; delta must be a multiple of dt");
    if (horizon > spec.mesh.horizon() * (1 + 1e-12)) throw ConfigError("bridge_flow: horizon exceeds the noise path");
  }
  const Spectral sp(spec.grid);
  const auto a = noisy ? nodes_of(spec.a, spec.grid) : std::vector<double>{};
  const auto da = noisy ? nodes_of(spec.da, spec.grid) : std::vector<double>{};
  const std::size_t n = spec.grid.size();

  BridgeSeries out;
  out.growth_bound = bridge_growth_bound(spec, horizon);
  BridgeState s{spec.rho0, spec.phi0, 0.0};
  s.phi.project_zero_mean();
  const double mass0 = s.rho.mass();
  auto record = [&] {
    out.times.push_back(s.t);
    out.states.push_back(s);
    out.hamiltonian.push_back(bridge_hamiltonian(s, spec.nu));
  };
  record();
  auto axpy = [n](const std::vector<double>& y, double c, const std::vector<double>& k) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = y[i] + c * k[i];
    return r;
  };
  for (std::size_t j = 0; j < steps; ++j) {
    const double t = static_cast<double>(j) * dt;
    const double xi = noisy ? spec.mesh.cell_slope(spec.mesh.cell_of(t + 0.5 * dt)) : 0.0;
    const double bound = bridge_stable_dt(s, spec, xi);
    if (dt > bound) throw StabilityError("bridge_flow: dt exceeds the stability bound", 0.9 * bound);
    const auto& r0 = s.rho.values;
    const auto& p0 = s.phi.values;
    const auto k1 = bridge_rhs(sp, spec, a, da, r0, p0, xi);
    const auto k2 = bridge_rhs(sp, spec, a, da, axpy(r0, dt / 2, k1.rho), axpy(p0, dt / 2, k1.phi), xi);
    const auto k3 = bridge_rhs(sp, spec, a, da, axpy(r0, dt / 2, k2.rho), axpy(p0, dt / 2, k2.phi), xi);
    const auto k4 = bridge_rhs(sp, spec, a, da, axpy(r0, dt, k3.rho), axpy(p0, dt, k3.phi), xi);
    std::vector<double> rho(n), phi(n);
    for (std::size_t i = 0; i < n; ++i) {
      rho[i] = r0[i] + dt / 6 * (k1.rho[i] + 2 * k2.rho[i] + 2 * k3.rho[i] + k4.rho[i]);
      phi[i] = p0[i] + dt / 6 * (k1.phi[i] + 2 * k2.phi[i] + 2 * k3.phi[i] + k4.phi[i]);
      if (!std::isfinite(rho[i]) || !std::isfinite(phi[i]))
        throw EvaluationError("bridge_flow: non-finite state at t = " + std::to_string(t + dt));
    }
    s.rho.values = std::move(rho);
    s.phi.values = std::move(phi);
    s.t = static_cast<double>(j + 1) * dt;
    out.max_mass_drift = std::max(out.max_mass_drift, std::abs(s.rho.mass() - mass0) / mass0);
    double clipped = 0.0;
    for (double& r : s.rho.values)
      if (r < spec.floor) {
        clipped += spec.floor - r;
        r = spec.floor;
      }
    if (clipped > 0.0) {
      out.clipped_mass += clipped * spec.grid.cell_volume();
      const double m = s.rho.mass();
      for (double& r : s.rho.values) r *= mass0 / m;
    }
    out.max_gauge_offset = std::max(out.max_gauge_offset, std::abs(s.phi.project_zero_mean()));
    if ((j + 1) % static_cast<std::size_t>(stride) == 0 || j + 1 == steps) record();
  }
  return out;
}

FbResidual fb_residual(const BridgeSpec& spec, const std::vector<BridgeState>& states, double t0, double dt) {
  spec.validate();
  if (states.size() < 3) throw InsufficientDataError("fb_residual needs at least 3 states");
  if (!(dt > 0.0)) throw ConfigError("fb_residual: dt must be positive");
  const Spectral sp(spec.grid);
  const bool noisy = spec.noisy();
  const auto a = noisy ? nodes_of(spec.a, spec.grid) : std::vector<double>{};
  const std::size_t n = spec.grid.size();
  std::vector<std::vector<double>> S;
  for (const auto& st : states) S.push_back(hopf_cole_inverse(st.rho, st.phi, spec.nu, spec.floor).field.values);

  FbResidual r;
  for (std::size_t k = 1; k + 1 < states.size(); ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    double xi = 0.0;
    if (noisy) {
      const double tol = 1e-9 * spec.mesh.delta();
      const auto cell = spec.mesh.cell_of(t - dt + tol);
      if (cell != spec.mesh.cell_of(t + dt - tol)) {
        r.skipped.push_back(t);
        continue;
      }
      xi = spec.mesh.cell_slope(cell);
    }
    const auto& rho = states[k].rho.values;
    const auto ds = sp.derivative(S[k], 0);
    const auto lap_rho = sp.laplacian(rho);
    const auto lap_s = sp.laplacian(S[k]);
    std::vector<double> flux(n), back(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double adv = a.empty() ? 0.0 : a[i] * xi;
      flux[i] = rho[i] * (ds[i] + adv);
      back[i] = (S[k + 1][i] - S[k - 1][i]) / (2 * dt) + 0.5 * ds[i] * ds[i] + ds[i] * adv + spec.nu * lap_s[i];
      mean += back[i] / static_cast<double>(n);
    }
    const auto div = sp.derivative(flux, 0);
    double f = 0.0, b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double rho_t = (states[k + 1].rho.values[i] - states[k - 1].rho.values[i]) / (2 * dt);
      f = std::max(f, std::abs(rho_t + div[i] - spec.nu * lap_rho[i]));
      b = std::max(b, std::abs(back[i] - mean));
    }
    r.times.push_back(t);
    r.forward.push_back(f);
    r.backward.push_back(b);
    r.sup_forward = std::max(r.sup_forward, f);
    r.sup_backward = std::max(r.sup_backward, b);
  }
  return r;
}

void write_bridge_csv(const BridgeSeries& series, double nu, std::ostream& out) {
  out.precision(17);
  out << "t,x,rho,Phi,S\n";
  for (std::size_t k = 0; k < series.states.size(); ++k) {
    const auto& st = series.states[k];
    const auto s = hopf_cole_inverse(st.rho, st.phi, nu, 0.0).field.values;
    for (std::size_t i = 0; i < s.size(); ++i)
      out << series.times[k] << ',' << st.rho.grid.coordinate(i, 0) << ',' << st.rho.values[i] << ','
          << st.phi.values[i] << ',' << s[i] << "\n";
  }
}

}  // namespace swhf
