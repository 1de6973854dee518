#include "swhf/snls.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>

#include "swhf/binary_io.hpp"
#include "swhf/errors.hpp"
#include "swhf/parallel.hpp"

namespace swhf {

double WaveField::mass() const {
  double s = 0.0;
  for (const auto& v : values) s += std::norm(v);
  return s * grid.spacing();
}

WaveField wave_from(const GridSpec& grid, const std::function<cplx(double)>& u) {
  grid.validate();
  WaveField w{grid, std::vector<cplx>(grid.size())};
  for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] = u(grid.coordinate(i, 0));
  return w;
}

Nonlinearity Nonlinearity::cubic() {
  return {[](double s) { return s; }, [](double r) { return 0.5 * r * r; }, [](double r) { return r; }};
}

Nonlinearity Nonlinearity::none() {
  return {[](double) { return 0.0; }, [](double) { return 0.0; }, [](double) { return 0.0; }};
}

void NlsSpec::validate() const {
  grid.validate();
  if (grid.dim != 1) throw ConfigError("nls: one-dimensional grids only");
  if (!nonlinearity.f || !nonlinearity.primitive) throw ConfigError("nls: nonlinearity needs f and its primitive");
  switch (driver) {
    case NlsDriver::kNone:
      break;
    case NlsDriver::kWzPotential:
    case NlsDriver::kStratPotential:
      field.validate();
      if (driver == NlsDriver::kWzPotential && (delta_level < 0 || delta_level > field.paths->level()))
        throw ConfigError("nls: delta level must lie in [0, path level]");
      break;
    case NlsDriver::kWhiteDispersion:
      if (!dispersion_path) throw ConfigError("nls: white dispersion needs a Brownian path");
      break;
    case NlsDriver::kRandomDispersion:
      if (!dispersion) throw ConfigError("nls: random dispersion needs a dispersion driver");
      break;
  }
}

int NlsSpec::effective_delta_level() const {
  return driver == NlsDriver::kStratPotential ? field.paths->level() : delta_level;
}

namespace {

bool is_potential(NlsDriver d) { return d == NlsDriver::kWzPotential || d == NlsDriver::kStratPotential; }

/// Spectral operators plus node values of the noise modes, built once per spec.
class Stepper {
 public:
  explicit Stepper(const NlsSpec& spec) : spec_(spec), spectral_(spec.grid) {
    spec.validate();
    if (is_potential(spec.driver)) {
      mesh_ = WongZakaiMesh(spec.field.paths, spec.effective_delta_level());
      const auto x = spec.grid.axis_nodes();
      for (const auto& mode : spec.field.modes) {
        std::vector<double> q(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) q[i] = mode.value(x[i]);
        modes_.push_back(std::move(q));
      }
    }
  }

  const Spectral& spectral() const { return spectral_; }

  void step(std::vector<cplx>& u, double t, double dt) const {
    if (!(dt > 0.0)) throw ConfigError("nls: dt must be positive");
    double tau0 = 0.5 * dt, tau1 = 0.5 * dt;
    std::vector<double> phase(u.size(), 0.0);
    switch (spec_.driver) {
      case NlsDriver::kNone:
        break;
      case NlsDriver::kWzPotential:
      case NlsDriver::kStratPotential: {
        const double d = mesh_.delta(), tol = 1e-9 * d;
        if (mesh_.cell_of(t + tol) != mesh_.cell_of(t + dt - tol))
          throw ConfigError("nls: step [" + std::to_string(t) + ", " + std::to_string(t + dt) +
                            "] crosses a Wong-Zakai node");
        for (std::size_t k = 0; k < modes_.size(); ++k) {
          const int c = static_cast<int>(k);
          const double db = wz_eval(mesh_, t + dt, c).value - wz_eval(mesh_, t, c).value;
          for (std::size_t i = 0; i < u.size(); ++i) phase[i] += modes_[k][i] * db;
        }
        break;
      }
      case NlsDriver::kWhiteDispersion: {
        const WongZakaiMesh m(spec_.dispersion_path, spec_.dispersion_path->level());
        const double db = wz_eval(m, t + dt).value - wz_eval(m, t).value;
        tau0 = tau1 = 0.5 * db;
        break;
      }
      case NlsDriver::kRandomDispersion:
        tau0 = dispersion_integral(*spec_.dispersion, t, t + 0.5 * dt);
        tau1 = dispersion_integral(*spec_.dispersion, t + 0.5 * dt, t + dt);
        break;
    }
    kinetic(u, tau0);
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double theta = spec_.lambda * spec_.nonlinearity.f(std::norm(u[i])) * dt + phase[i];
      u[i] *= std::polar(1.0, theta);
    }
    kinetic(u, tau1);
    for (const auto& v : u)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw EvaluationError("nls: non-finite wave at t = " + std::to_string(t + dt));
  }

 private:
  void kinetic(std::vector<cplx>& u, double tau) const {
    if (tau == 0.0) return;
    const auto& k2 = spectral_.k_squared();
    std::vector<cplx> mult(k2.size());
    for (std::size_t j = 0; j < k2.size(); ++j) mult[j] = std::polar(1.0, -k2[j] * tau);
    u = spectral_.apply_multiplier(u, mult);
  }

  const NlsSpec& spec_;
  Spectral spectral_;
  WongZakaiMesh mesh_;
  std::vector<std::vector<double>> modes_;
};

std::size_t step_count(double horizon, double dt) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw ConfigError("nls: horizon and dt must be positive");
  const double r = horizon / dt;
  const double n = std::round(r);
  if (std::abs(r - n) > 1e-9 * std::max(1.0, r)) throw ConfigError("nls: horizon must be a multiple of dt");
  return static_cast<std::size_t>(n);
}

double l2_distance(const std::vector<cplx>& a, const std::vector<cplx>& b, double h) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a[i] - b[i]);
  return std::sqrt(s * h);
}

}  // namespace

WaveField nls_step(const NlsSpec& spec, const WaveField& u, double t, double dt) {
  WaveField out = u;
  Stepper(spec).step(out.values, t, dt);
  return out;
}

double nls_energy(const NlsSpec& spec, const WaveField& u) {
  const Spectral sp(u.grid);
  const auto du = sp.derivative(std::span<const cplx>(u.values), 0);
  double kin = 0.0, pot = 0.0;
  for (std::size_t i = 0; i < du.size(); ++i) {
    kin += 0.5 * std::norm(du[i]);
    pot += spec.nonlinearity.primitive(std::norm(u.values[i]));
  }
  return (kin - 0.5 * spec.lambda * pot) * u.grid.spacing();
}

NlsSeries nls_evolve(const NlsSpec& spec, const WaveField& u0, double horizon, double dt, int stride) {
  if (stride < 1) throw ConfigError("nls: sample stride must be positive");
  if (!(u0.grid == spec.grid) || u0.values.size() != spec.grid.size()) throw ConfigError("nls: u0 grid mismatch");
  const std::size_t steps = step_count(horizon, dt);
  const Stepper stepper(spec);
  NlsSeries s;
  WaveField u = u0;
  auto record = [&](double t) {
    s.times.push_back(t);
    s.waves.push_back(u);
    s.mass.push_back(u.mass());
    s.energy.push_back(nls_energy(spec, u));
  };
  record(0.0);
  for (std::size_t j = 0; j < steps; ++j) {
    stepper.step(u.values, static_cast<double>(j) * dt, dt);
    if ((j + 1) % static_cast<std::size_t>(stride) == 0 || j + 1 == steps) record(static_cast<double>(j + 1) * dt);
  }
  return s;
}

MadelungFields madelung(const WaveField& u, double support_threshold) {
  const std::size_t n = u.values.size();
  MadelungFields m;
  m.grid = u.grid;
  m.rho.resize(n);
  m.phase.assign(n, 0.0);
  m.mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) m.rho[i] = std::norm(u.values[i]);
  m.raw_mass = std::accumulate(m.rho.begin(), m.rho.end(), 0.0) * u.grid.spacing();
  const double peak = n ? *std::max_element(m.rho.begin(), m.rho.end()) : 0.0;
  if (!(peak > 0.0)) return m;
  for (std::size_t i = 0; i < n; ++i) m.mask[i] = m.rho[i] >= support_threshold * peak;

  auto wrapped = [&](std::size_t from, std::size_t to) { return std::arg(u.values[to] * std::conj(u.values[from])); };
  auto unwrap = [&](const MadelungComponent& c) {
    const std::size_t a = c.anchor;
    m.phase[a] = std::arg(u.values[a]);
    const std::size_t right = (c.begin + c.length - a + n - 1) % n;  // nodes after the anchor
    for (std::size_t s = 0, i = a; s < right; ++s, i = (i + 1) % n) m.phase[(i + 1) % n] = m.phase[i] + wrapped(i, (i + 1) % n);
    const std::size_t left = (a + n - c.begin) % n;
    for (std::size_t s = 0, i = a; s < left; ++s, i = (i + n - 1) % n) m.phase[(i + n - 1) % n] = m.phase[i] + wrapped(i, (i + n - 1) % n);
  };
  auto anchor_of = [&](std::size_t begin, std::size_t length) {
    std::size_t best = begin;
    for (std::size_t s = 0; s < length; ++s)
      if (m.rho[(begin + s) % n] > m.rho[best]) best = (begin + s) % n;
    return best;
  };

  const auto gap = std::find(m.mask.begin(), m.mask.end(), 0);
  if (gap == m.mask.end()) {
    const std::size_t a = anchor_of(0, n);
    m.components.push_back({a, n, a});
    unwrap(m.components.back());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += wrapped(i, (i + 1) % n);
    m.winding = static_cast<int>(std::lround(total / (2.0 * M_PI)));
    return m;
  }
  const std::size_t start = static_cast<std::size_t>(gap - m.mask.begin());
  for (std::size_t s = 0; s < n;) {
    const std::size_t i = (start + s) % n;
    if (!m.mask[i]) {
      ++s;
      continue;
    }
    std::size_t len = 0;
    while (s + len < n && m.mask[(start + s + len) % n]) ++len;
    m.components.push_back({i, len, anchor_of(i, len)});
    unwrap(m.components.back());
    s += len;
  }
  return m;
}

MadelungResidual madelung_residual(const NlsSpec& spec, const std::vector<WaveField>& waves, double t0, double dt,
                                   double support_threshold) {
  spec.validate();
  if (spec.driver == NlsDriver::kWhiteDispersion || spec.driver == NlsDriver::kStratPotential)
    throw ConfigError("madelung_residual: the driver has no pointwise rate to test against");
  if (waves.size() < 3) throw InsufficientDataError("madelung_residual needs at least 3 waves");
  if (!(dt > 0.0)) throw ConfigError("madelung_residual: dt must be positive");
  const GridSpec& g = spec.grid;
  const std::size_t n = g.size();
  const Spectral sp(g);
  const auto x = g.axis_nodes();
  std::optional<WongZakaiMesh> mesh;
  if (spec.driver == NlsDriver::kWzPotential) mesh.emplace(spec.field.paths, spec.delta_level);

  MadelungResidual r;
  for (std::size_t k = 1; k + 1 < waves.size(); ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    double rate = 1.0;
    std::vector<double> wdot(n, 0.0);
    if (mesh) {
      const double tol = 1e-9 * mesh->delta();
      if (mesh->cell_of(t - dt + tol) != mesh->cell_of(t + dt - tol)) {
        r.skipped.push_back(t);
        continue;
      }
      wdot = wiener_field_eval(spec.field, spec.delta_level, t, x).derivatives;
    } else if (spec.driver == NlsDriver::kRandomDispersion) {
      rate = dispersion_integral(*spec.dispersion, t - dt, t + dt) / (2.0 * dt);
    }
    const auto& um = waves[k - 1].values;
    const auto& u = waves[k].values;
    const auto& up = waves[k + 1].values;
    std::vector<double> rho(n), amp(n), current(n);
    std::vector<char> mask(n, 1);
    double peak = 0.0;
    for (const auto* w : {&um, &u, &up})
      for (const auto& v : *w) peak = std::max(peak, std::norm(v));
    std::size_t kept = 0;
    const auto du = sp.derivative(std::span<const cplx>(u), 0);
    for (std::size_t i = 0; i < n; ++i) {
      rho[i] = std::norm(u[i]);
      amp[i] = std::abs(u[i]);
      current[i] = std::imag(std::conj(u[i]) * du[i]);
      for (const auto* w : {&um, &u, &up})
        if (std::norm((*w)[i]) < support_threshold * peak) mask[i] = 0;
      kept += mask[i];
    }
    if (2 * kept < n) throw SupportError("madelung_residual: support mask below half the grid");
    const auto dcur = sp.derivative(std::span<const double>(current), 0);
    const auto lap_amp = sp.laplacian(std::span<const double>(amp));
    std::vector<double> res(n, 0.0);
    double cont = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      const double rho_t = (std::norm(up[i]) - std::norm(um[i])) / (2.0 * dt);
      cont = std::max(cont, std::abs(rho_t + 2.0 * rate * dcur[i]));
      const double s_t = std::arg(up[i] * std::conj(um[i])) / (2.0 * dt);
      const double grad_s = current[i] / rho[i];
      const double bohm = -4.0 * lap_amp[i] / amp[i];
      const double rhs =
          rate * (-grad_s * grad_s - 0.25 * bohm) + spec.lambda * spec.nonlinearity.f(rho[i]) + wdot[i];
      res[i] = s_t - rhs;
      mean += res[i];
    }
    mean /= static_cast<double>(kept);
    double ph = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) ph = std::max(ph, std::abs(res[i] - mean));
    r.times.push_back(t);
    r.continuity.push_back(cont);
    r.phase.push_back(ph);
    r.sup_continuity = std::max(r.sup_continuity, cont);
    r.sup_phase = std::max(r.sup_phase, ph);
  }
  return r;
}

ConvergenceReport nls_convergence_study(const NlsSpec& spec, const WaveField& u0, const NlsStudyOptions& o) {
  if (spec.driver != NlsDriver::kNone && spec.driver != NlsDriver::kWzPotential &&
      spec.driver != NlsDriver::kStratPotential)
    throw ConfigError("nls convergence study: potential noise drivers only");
  if (o.delta_levels.empty()) throw InsufficientDataError("nls convergence study: no delta levels");
  if (o.substeps < 1 || o.reference_offset < 1 || o.replications < 1)
    throw ConfigError("nls convergence study: substeps, reference offset and replications must be positive");
  const int ref_level = o.delta_levels.back() + o.reference_offset;
  const std::size_t steps = (std::size_t{1} << ref_level) * static_cast<std::size_t>(o.substeps);
  const double dt = o.horizon / static_cast<double>(steps);
  const std::size_t modes = spec.driver == NlsDriver::kNone ? 0 : spec.field.modes.size();
  const std::size_t L = o.delta_levels.size();

  ConvergenceReport report;
  report.system = "snls";
  report.norm = "sup_t L2";
  report.seed = o.seed;
  report.horizon = o.horizon;
  report.dt = dt;
  report.reference_level = ref_level;
  report.per_path.assign(o.replications, std::vector<double>(L, std::nan("")));

  parallel_for(o.replications, o.workers, [&](std::size_t m) {
    std::vector<NlsSpec> specs(L + 1, spec);
    if (modes > 0) {
      const auto path = std::make_shared<const BrownianPath>(
          sample_brownian(derive_seed(o.seed, m), o.horizon, ref_level, static_cast<int>(modes)));
      for (std::size_t l = 0; l <= L; ++l) {
        specs[l].field.paths = path;
        specs[l].driver = NlsDriver::kWzPotential;
        specs[l].delta_level = l < L ? o.delta_levels[l] : ref_level;
      }
    }
    std::vector<Stepper> steppers;
    steppers.reserve(L + 1);
    for (const auto& s : specs) steppers.emplace_back(s);
    std::vector<std::vector<cplx>> u(L + 1, u0.values);
    std::vector<double> sup(L, 0.0);
    std::vector<char> alive(L, 1);
    const double h = spec.grid.spacing();
    try {
      for (std::size_t j = 0; j < steps; ++j) {
        const double t = static_cast<double>(j) * dt;
        steppers[L].step(u[L], t, dt);
        for (std::size_t l = 0; l < L; ++l) {
          if (!alive[l]) continue;
          try {
            steppers[l].step(u[l], t, dt);
            sup[l] = std::max(sup[l], l2_distance(u[l], u[L], h));
          } catch (const EvaluationError&) {
            alive[l] = 0;
          }
        }
      }
    } catch (const EvaluationError&) {
      return;
    }
    for (std::size_t l = 0; l < L; ++l)
      if (alive[l]) report.per_path[m][l] = sup[l];
  });

  StudyAssembly assembly;
  assembly.bootstrap_resamples = o.bootstrap_resamples;
  assemble_report(report, o.delta_levels, assembly);
  return report;
}

void write_wave_csv(const WaveField& u, std::ostream& out, double support_threshold) {
  const auto m = madelung(u, support_threshold);
  out.precision(17);
  out << "x,re,im,rho,S\n";
  for (std::size_t i = 0; i < u.values.size(); ++i)
    out << u.grid.coordinate(i, 0) << ',' << u.values[i].real() << ',' << u.values[i].imag() << ',' << m.rho[i]
        << ',' << m.phase[i] << "\n";
}

void write_wave_binary(const WaveField& u, std::ostream& out) {
  binio::put_magic(out, "SWHFWAVE");
  binio::put<double>(out, u.grid.period);
  binio::put<double>(out, u.grid.origin);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(u.grid.n));
  for (const auto& v : u.values) {
    binio::put<double>(out, v.real());
    binio::put<double>(out, v.imag());
  }
  if (!out) throw IoError("failed to write wave container");
}

WaveField read_wave_binary(std::istream& in) {
  binio::expect_magic(in, "SWHFWAVE");
  WaveField u;
  u.grid.dim = 1;
  u.grid.period = binio::get<double>(in);
  u.grid.origin = binio::get<double>(in);
  u.grid.n = static_cast<int>(binio::get<std::uint32_t>(in));
  try {
    u.grid.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("wave container: ") + e.what());
  }
  u.values.resize(u.grid.size());
  for (auto& v : u.values) {
    const double re = binio::get<double>(in);
    v = {re, binio::get<double>(in)};
  }
  return u;
}

}  // namespace swhf
