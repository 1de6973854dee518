#include "swhf/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "swhf/errors.hpp"
#include "swhf/parallel.hpp"
#include "swhf/philox.hpp"

namespace swhf {

namespace {

void require_floor(const DensityField& rho, double floor, const char* who) {
  for (std::size_t i = 0; i < rho.values.size(); ++i)
    if (!(rho.values[i] >= floor))
      throw SupportError(std::string(who) + ": density below floor at node " + std::to_string(i));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void remove_mean(std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (double& x : v) x -= m;
}

/// Index of the periodic neighbour of flat node i along an axis, shifted by +-1.
std::size_t neighbour(const GridSpec& g, std::size_t i, int axis, int shift) {
  const std::size_t n = g.n;
  if (g.dim == 1) return (i + n + shift) % n;
  std::size_t r = i / n, c = i % n;
  if (axis == 0) r = (r + n + shift) % n;
  else c = (c + n + shift) % n;
  return r * n + c;
}

double minimal_image(const Domain& domain, double d) {
  if (!domain.torus) return d;
  const double L = domain.period[0];
  return d - L * std::round(d / L);
}

/// Trigonometric interpolant of periodic samples on [origin, origin + L).
class TrigInterpolant {
 public:
  explicit TrigInterpolant(const DensityField& f) : grid_(f.grid) {
    const int n = grid_.n;
    coef_.assign(n, cplx(0.0));
    for (int m = 0; m < n; ++m) {
      cplx s = 0.0;
      for (int j = 0; j < n; ++j) s += f.values[j] * std::polar(1.0, -2.0 * M_PI * m * j / n);
      coef_[m] = s / static_cast<double>(n);
    }
  }
  double operator()(double x) const {
    const int n = grid_.n;
    const double theta = 2.0 * M_PI * (x - grid_.origin) / grid_.period;
    double s = coef_[0].real() + coef_[n / 2].real() * std::cos(n / 2 * theta);
    for (int m = 1; m < n / 2; ++m) s += 2.0 * (coef_[m] * std::polar(1.0, m * theta)).real();
    return s;
  }

 private:
  GridSpec grid_;
  std::vector<cplx> coef_;
};

FlowOptions ending_at(FlowOptions o, double t) {
  o.end_time = t;
  return o;
}

}  // namespace

InitialVelocity InitialVelocity::zero() {
  return {[](const Vec&, Eigen::Ref<Vec> p) { p.setZero(); }, [](const Vec&, Eigen::Ref<Mat> j) { j.setZero(); }};
}

InitialVelocity InitialVelocity::constant(Vec c) {
  return {[c](const Vec&, Eigen::Ref<Vec> p) { p = c; }, [](const Vec&, Eigen::Ref<Mat> j) { j.setZero(); }};
}

double l1_distance(const GridSpec& grid, std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s * grid.cell_volume();
}

PushforwardResult pushforward_jacobian(const HamiltonianSpec& spec, const DensityField& rho0,
                                       const InitialVelocity& v0, const FlowDriver& driver, double t,
                                       const PushforwardOptions& options) {
  const GridSpec& grid = rho0.grid;
  grid.validate();
  if (grid.dim != 1 || spec.dim != 1) throw ConfigError("pushforward_jacobian supports one-dimensional grids only");
  if (!(t >= 0.0) || t > driver_horizon(driver)) throw DomainError("pushforward_jacobian: t outside the driver horizon");
  const std::size_t n = grid.size();
  PushforwardResult out;
  out.density = rho0;
  out.preimages = grid.axis_nodes();
  out.momentum.assign(n, 0.0);
  Vec p(1);
  for (std::size_t i = 0; i < n; ++i) {
    v0.value(Vec::Constant(1, out.preimages[i]), p);
    out.momentum[i] = p[0];
  }
  if (t == 0.0) return out;

  std::function<double(double)> rho_at = options.rho0_function;
  if (!rho_at) {
    auto interp = std::make_shared<TrigInterpolant>(rho0);
    const bool periodic = spec.domain.torus;
    const double lo = grid.origin - 0.5 * grid.spacing(), hi = grid.origin + grid.period - 0.5 * grid.spacing();
    rho_at = [interp, periodic, lo, hi](double x) {
      if (!periodic && (x < lo || x > hi)) return 0.0;
      return std::max(0.0, (*interp)(x));
    };
  }
  const FlowOptions flow_opt = ending_at(options.flow, t);

  struct Eval {
    double x = 0.0, p = 0.0, det = 1.0;
    FlowResult flow;
  };
  auto forward = [&](double x0) {
    Vec p0(1), jac(1);
    Mat dv(1, 1);
    v0.value(Vec::Constant(1, x0), p0);
    v0.jacobian(Vec::Constant(1, x0), dv);
    Eval e;
    e.flow = variational_flow(spec, {Vec::Constant(1, x0), p0, 0.0}, driver, flow_opt);
    if (!e.flow.completed()) throw EvaluationError("pushforward_jacobian: flow did not complete");
    e.x = e.flow.x.back()[0];
    e.p = e.flow.p.back()[0];
    e.det = (e.flow.jxx(e.flow.times.size() - 1) + e.flow.jxp(e.flow.times.size() - 1) * dv)(0, 0);
    return e;
  };

  std::vector<double> det(n);
  parallel_for(n, options.workers, [&](std::size_t i) {
    const double y = grid.coordinate(i, 0);
    const Eval at_y = forward(y);
    double x0 = y - minimal_image(spec.domain, at_y.x - y);
    Eval e = forward(x0);
    bool converged = false;
    for (int it = 0; it < options.newton_max_iterations; ++it) {
      const double r = minimal_image(spec.domain, e.x - y);
      if (std::abs(r) <= options.newton_tolerance * (1.0 + std::abs(y))) {
        converged = true;
        break;
      }
      if (!(std::abs(e.det) > 0.0)) break;
      double step = r / e.det;
      // halve the step while the residual grows
      for (int k = 0; k < 30; ++k) {
        Eval trial = forward(x0 - step);
        if (std::abs(minimal_image(spec.domain, trial.x - y)) < std::abs(r)) {
          x0 -= step;
          e = std::move(trial);
          break;
        }
        step *= 0.5;
        if (k == 29) {
          x0 -= step;
          e = forward(x0);
        }
      }
    }
    if (!converged) throw ConvergenceError("pushforward_jacobian: preimage search did not converge",
                                           std::abs(minimal_image(spec.domain, e.x - y)));
    Mat dv(1, 1);
    v0.jacobian(Vec::Constant(1, x0), dv);
    if (const auto lost = diffeo_loss_time(e.flow, options.det_threshold, dv))
      throw DiffeoLostError("pushforward_jacobian: flow map lost injectivity", *lost);
    out.preimages[i] = x0;
    out.momentum[i] = e.p;
    det[i] = e.det;
  });
  for (std::size_t i = 0; i < n; ++i) out.density.values[i] = rho_at(out.preimages[i]) / std::abs(det[i]);
  out.renormalization = out.density.normalize();
  return out;
}

MonteCarloDensity pushforward_mc(const HamiltonianSpec& spec, const DensityField& rho0, const InitialVelocity& v0,
                                 const FlowDriver& driver, double t, std::size_t particles, std::uint64_t seed,
                                 const MonteCarloOptions& options) {
  const GridSpec& grid = rho0.grid;
  grid.validate();
  if (grid.dim != spec.dim) throw ConfigError("pushforward_mc: grid and Hamiltonian dimensions differ");
  if (particles < 1000) throw ConfigError("pushforward_mc needs at least 1000 particles");
  if (!(t >= 0.0) || t > driver_horizon(driver)) throw DomainError("pushforward_mc: t outside the driver horizon");
  const std::size_t cells = grid.size();
  const double h = grid.spacing();
  const int d = grid.dim;

  // Sample initial positions from the cell-wise constant density.
  std::vector<Vec> x0(particles, Vec(d));
  if (d == 1) {
    std::vector<double> cdf(cells + 1, 0.0);
    for (std::size_t j = 0; j < cells; ++j) cdf[j + 1] = cdf[j] + std::max(0.0, rho0.values[j]);
    const double total = cdf.back();
    if (!(total > 0.0)) throw SamplingError("pushforward_mc: density has no mass");
    for (std::size_t i = 0; i < particles; ++i) {
      const double u = keyed_uniform(seed, Stream::kSampling, 0, i, 0) * total;
      std::size_t j = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
      j = std::clamp<std::size_t>(j, 1, cells) - 1;
      while (j + 1 < cells && rho0.values[j] <= 0.0) ++j;
      const double frac = rho0.values[j] > 0.0 ? (u - cdf[j]) / rho0.values[j] : 0.5;
      x0[i][0] = grid.coordinate(j, 0) - 0.5 * h + h * std::clamp(frac, 0.0, 1.0);
    }
  } else {
    const double mx = *std::max_element(rho0.values.begin(), rho0.values.end());
    const double mean = std::accumulate(rho0.values.begin(), rho0.values.end(), 0.0) / cells;
    if (!(mx > 0.0) || mean / mx < options.rejection_efficiency_floor)
      throw SamplingError("pushforward_mc: rejection efficiency " + std::to_string(mx > 0 ? mean / mx : 0.0) +
                          " below floor");
    for (std::size_t i = 0; i < particles; ++i) {
      for (std::uint32_t attempt = 0;; attempt += 1) {
        const auto j = std::min<std::size_t>(cells - 1, keyed_uniform(seed, Stream::kSampling, attempt, i, 0) * cells);
        if (keyed_uniform(seed, Stream::kSampling, attempt, i, 1) * mx < rho0.values[j]) {
          for (int a = 0; a < d; ++a)
            x0[i][a] = grid.coordinate(j, a) - 0.5 * h + h * keyed_uniform(seed, Stream::kSampling, attempt, i, 2 + a);
          break;
        }
      }
    }
  }

  FlowOptions flow_opt = ending_at(options.flow, t);
  flow_opt.record_stride = std::numeric_limits<int>::max();
  flow_opt.jacobians = false;
  std::vector<long> bin(particles, -1);
  parallel_for(particles, options.workers, [&](std::size_t i) {
    Vec p0(d);
    v0.value(x0[i], p0);
    Vec x = x0[i];
    if (t > 0.0) {
      const auto r = run_flow(spec, {x0[i], p0, 0.0}, driver, flow_opt);
      if (!r.completed()) return;
      x = r.x.back();
    }
    long flat = 0;
    for (int a = 0; a < d; ++a) {
      long k = std::lround((x[a] - grid.origin) / h);
      if (spec.domain.torus) k = ((k % grid.n) + grid.n) % grid.n;
      else if (k < 0 || k >= grid.n) return;
      flat = flat * grid.n + k;
    }
    bin[i] = flat;
  });

  MonteCarloDensity out;
  std::vector<double> counts(cells, 0.0);
  std::size_t inside = 0;
  for (long b : bin) {
    if (b < 0) {
      ++out.outside;
      continue;
    }
    counts[b] += 1.0;
    ++inside;
  }
  if (inside == 0) throw SamplingError("pushforward_mc: every particle left the grid");
  const double vol = grid.cell_volume();
  out.density = {grid, std::vector<double>(cells)};
  out.standard_error.assign(cells, 0.0);
  const double N = static_cast<double>(inside);
  for (std::size_t j = 0; j < cells; ++j) {
    const double q = counts[j] / N;
    out.density.values[j] = q / vol;
    out.standard_error[j] = std::sqrt(q * (1.0 - q) / N) / vol;
  }

  // Bootstrap: resample particles with replacement and re-histogram.
  std::vector<long> kept;
  kept.reserve(inside);
  for (long b : bin)
    if (b >= 0) kept.push_back(b);
  const int B = options.bootstrap_resamples;
  std::vector<double> l1(B, 0.0);
  parallel_for(static_cast<std::size_t>(B), options.workers, [&](std::size_t b) {
    std::vector<double> c(cells, 0.0);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto k = std::min<std::size_t>(kept.size() - 1,
                                           keyed_uniform(seed, Stream::kBootstrap, static_cast<std::uint32_t>(b), i, 0) *
                                               static_cast<double>(kept.size()));
      c[kept[k]] += 1.0;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < cells; ++j) s += std::abs(c[j] - counts[j]);
    l1[b] = s / N;
  });
  double acc = 0.0;
  for (double v : l1) acc += v * v;
  out.l1_standard_error = B > 0 ? std::sqrt(acc / B) : 0.0;
  return out;
}

std::vector<double> weighted_laplacian(const DensityField& rho, std::span<const double> phi) {
  const GridSpec& g = rho.grid;
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  std::vector<double> out(phi.size(), 0.0);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    double s = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const std::size_t ip = neighbour(g, i, a, +1), im = neighbour(g, i, a, -1);
      const double rp = 0.5 * (rho.values[i] + rho.values[ip]);
      const double rm = 0.5 * (rho.values[i] + rho.values[im]);
      s += rp * (phi[ip] - phi[i]) - rm * (phi[i] - phi[im]);
    }
    out[i] = -s * inv_h2;
  }
  return out;
}

EllipticResult elliptic_solve(const DensityField& rho, std::span<const double> kappa, const EllipticOptions& options) {
  const GridSpec& g = rho.grid;
  g.validate();
  if (kappa.size() != g.size() || rho.values.size() != g.size())
    throw ConfigError("elliptic_solve: field sizes do not match the grid");
  require_floor(rho, options.density_floor, "elliptic_solve");
  const double net = sum_times_volume(g, kappa);
  if (std::abs(net) > options.gauge_tolerance)
    throw GaugeError("elliptic_solve: source has nonzero mean (integral " + std::to_string(net) + ")");

  const std::size_t N = g.size();
  std::vector<double> b(kappa.begin(), kappa.end());
  remove_mean(b);
  EllipticResult res;
  res.phi = {g, std::vector<double>(N, 0.0)};
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) return res;

  const Spectral sp(g);
  const double rho_mean = std::accumulate(rho.values.begin(), rho.values.end(), 0.0) / N;
  const double h = g.spacing();
  std::vector<double> symbol(N, 0.0);
  for (std::size_t f = 0; f < N; ++f) {
    const int idx[2] = {g.dim == 1 ? int(f) : int(f / g.n), g.dim == 1 ? 0 : int(f % g.n)};
    for (int a = 0; a < g.dim; ++a) {
      const double s = std::sin(M_PI * idx[a] / g.n);
      symbol[f] += 4.0 / (h * h) * s * s;
    }
    symbol[f] *= rho_mean;
  }
  auto precondition = [&](const std::vector<double>& r) {
    auto hat = sp.forward(std::vector<cplx>(r.begin(), r.end()));
    for (std::size_t f = 0; f < N; ++f) hat[f] = symbol[f] > 0.0 ? hat[f] / symbol[f] : 0.0;
    const auto back = sp.backward(hat);
    std::vector<double> z(N);
    for (std::size_t i = 0; i < N; ++i) z[i] = back[i].real();
    remove_mean(z);
    return z;
  };

  std::vector<double>& x = res.phi.values;
  std::vector<double> r = b;
  std::vector<double> z = precondition(r);
  std::vector<double> p = z;
  double rz = dot(r, z);
  double rel = 1.0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const auto ap = weighted_laplacian(rho, p);
    const double alpha = rz / dot(p, ap);
    for (std::size_t i = 0; i < N; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    remove_mean(r);
    rel = std::sqrt(dot(r, r)) / bnorm;
    res.iterations = it;
    if (rel <= options.tolerance) break;
    z = precondition(r);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < N; ++i) p[i] = z[i] + beta * p[i];
  }
  remove_mean(x);
  auto ax = weighted_laplacian(rho, x);
  for (std::size_t i = 0; i < N; ++i) ax[i] = b[i] - ax[i];
  res.relative_residual = std::sqrt(dot(ax, ax)) / bnorm;
  if (!(res.relative_residual <= options.tolerance * 10.0) && !(rel <= options.tolerance))
    throw ConvergenceError("elliptic_solve: conjugate gradients stagnated", res.relative_residual);
  return res;
}

double wasserstein_metric(const DensityField& rho, std::span<const double> kappa1, std::span<const double> kappa2,
                          const EllipticOptions& options) {
  const auto phi1 = elliptic_solve(rho, kappa1, options).phi.values;
  const auto phi2 = elliptic_solve(rho, kappa2, options).phi.values;
  const GridSpec& g = rho.grid;
  const double h = g.spacing();
  double s = 0.0;
  for (std::size_t i = 0; i < phi1.size(); ++i)
    for (int a = 0; a < g.dim; ++a) {
      const std::size_t ip = neighbour(g, i, a, +1);
      s += 0.5 * (rho.values[i] + rho.values[ip]) * (phi1[ip] - phi1[i]) * (phi2[ip] - phi2[i]) / (h * h);
    }
  return s * g.cell_volume();
}

FisherResult fisher_and_bohm(const DensityField& rho, double floor) {
  const GridSpec& g = rho.grid;
  g.validate();
  require_floor(rho, floor, "fisher_and_bohm");
  const Spectral sp(g);
  const std::size_t N = g.size();
  std::vector<double> root(N);
  for (std::size_t i = 0; i < N; ++i) root[i] = std::sqrt(rho.values[i]);
  const auto lap_root = sp.laplacian(root);
  const auto lap_rho = sp.laplacian(rho.values);
  std::vector<double> grad2(N, 0.0);
  for (int a = 0; a < g.dim; ++a) {
    const auto dr = sp.derivative(rho.values, a);
    for (std::size_t i = 0; i < N; ++i) grad2[i] += dr[i] * dr[i];
  }
  FisherResult out;
  out.bohm.resize(N);
  out.bohm_log_form.resize(N);
  double info = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double r = rho.values[i];
    info += grad2[i] / r;
    out.bohm[i] = -4.0 * lap_root[i] / root[i];
    out.bohm_log_form[i] = grad2[i] / (r * r) - 2.0 * lap_rho[i] / r;
    out.form_discrepancy = std::max(out.form_discrepancy, std::abs(out.bohm[i] - out.bohm_log_form[i]));
  }
  out.information = info * g.cell_volume();
  return out;
}

FunctionalDerivative linear_functional(const GridSpec& grid, const std::function<double(double)>& f) {
  std::vector<double> values(grid.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = f(grid.coordinate(i, 0));
  return [values](const DensityField&) { return values; };
}

ElResidual el_residual(const std::vector<DensityField>& series, double t0, double dt, const WhfSpec& spec,
                       const std::optional<WongZakaiMesh>& mesh, const EllipticOptions& elliptic) {
  const std::size_t K = series.size();
  if (K < 5) throw InsufficientDataError("el_residual needs at least 5 densities");
  if (!(dt > 0.0)) throw DomainError("el_residual: dt must be positive");
  const GridSpec& g = series.front().grid;
  for (const auto& r : series) require_floor(r, elliptic.density_floor, "el_residual");
  const Spectral sp(g);
  const std::size_t N = g.size();

  std::vector<std::vector<double>> phi(K);
  for (std::size_t j = 1; j + 1 < K; ++j) {
    std::vector<double> rate(N);
    for (std::size_t i = 0; i < N; ++i) rate[i] = (series[j + 1].values[i] - series[j - 1].values[i]) / (2 * dt);
    remove_mean(rate);
    phi[j] = elliptic_solve(series[j], rate, elliptic).phi.values;
  }

  ElResidual out;
  for (std::size_t k = 2; k + 2 < K; ++k) {
    const double t = t0 + k * dt;
    double xi_dot = 0.0;
    bool skip = false;
    if (mesh && spec.eta != 0.0) {
      const double lo = t - 2 * dt, hi = t + 2 * dt;
      const std::size_t c = mesh->cell_of(t);
      const double cell_lo = c * mesh->delta(), cell_hi = (c + 1) * mesh->delta();
      skip = lo < cell_lo - 1e-12 * dt || hi > cell_hi + 1e-12 * dt;
      xi_dot = mesh->cell_slope(c);
    }
    out.times.push_back(t);
    out.skipped.push_back(skip);
    if (skip) {
      out.continuity.push_back(0.0);
      out.hamilton_jacobi.push_back(0.0);
      continue;
    }
    const DensityField& rho = series[k];
    std::vector<double> cont(N), hj(N, 0.0);
    std::vector<double> div(N, 0.0);
    for (int a = 0; a < g.dim; ++a) {
      const auto gphi = sp.derivative(phi[k], a);
      std::vector<double> flux(N);
      for (std::size_t i = 0; i < N; ++i) {
        flux[i] = rho.values[i] * gphi[i];
        hj[i] += 0.5 * gphi[i] * gphi[i];
      }
      const auto df = sp.derivative(flux, a);
      for (std::size_t i = 0; i < N; ++i) div[i] += df[i];
    }
    for (std::size_t i = 0; i < N; ++i) {
      cont[i] = (series[k + 1].values[i] - series[k - 1].values[i]) / (2 * dt) + div[i];
      hj[i] += (phi[k + 1][i] - phi[k - 1][i]) / (2 * dt);
    }
    if (spec.d_potential) {
      const auto f = spec.d_potential(rho);
      for (std::size_t i = 0; i < N; ++i) hj[i] += f[i];
    }
    if (spec.d_noise && spec.eta != 0.0 && xi_dot != 0.0) {
      const auto s = spec.d_noise(rho);
      for (std::size_t i = 0; i < N; ++i) hj[i] += spec.eta * s[i] * xi_dot;
    }
    remove_mean(hj);
    out.continuity.push_back(sup_norm(cont));
    out.hamilton_jacobi.push_back(sup_norm(hj));
    out.sup_continuity = std::max(out.sup_continuity, out.continuity.back());
    out.sup_hamilton_jacobi = std::max(out.sup_hamilton_jacobi, out.hamilton_jacobi.back());
  }
  return out;
}

namespace {

struct WhfRhs {
  std::vector<double> rho, field;
};

WhfRhs whf_rhs(const Spectral& sp, const WhfSpec& spec, WhfForm form, const std::vector<double>& rho,
               const std::vector<double>& field, double xi_dot) {
  const std::size_t N = rho.size();
  const double a = 1.0 + spec.eta * xi_dot;
  const std::vector<double> u = form == WhfForm::kPotential ? sp.derivative(field, 0) : field;
  std::vector<double> prod(N);
  for (std::size_t i = 0; i < N; ++i) prod[i] = rho[i] * u[i];
  const auto div = sp.derivative(sp.dealias(prod), 0);
  WhfRhs out{std::vector<double>(N), std::vector<double>(N, 0.0)};
  for (std::size_t i = 0; i < N; ++i) out.rho[i] = -a * div[i];

  const DensityField density{sp.grid(), rho};
  std::vector<double> force(N, 0.0);
  if (spec.d_potential) force = spec.d_potential(density);
  if (spec.d_noise && spec.eta != 0.0 && xi_dot != 0.0) {
    const auto s = spec.d_noise(density);
    for (std::size_t i = 0; i < N; ++i) force[i] += spec.eta * xi_dot * s[i];
  }
  if (form == WhfForm::kPotential) {
    for (std::size_t i = 0; i < N; ++i) prod[i] = 0.5 * u[i] * u[i];
    const auto q = sp.dealias(prod);
    for (std::size_t i = 0; i < N; ++i) out.field[i] = -a * q[i] - force[i];
  } else {
    const auto du = sp.derivative(u, 0);
    for (std::size_t i = 0; i < N; ++i) prod[i] = u[i] * du[i];
    const auto q = sp.dealias(prod);
    const auto dforce = sp.derivative(force, 0);
    for (std::size_t i = 0; i < N; ++i) out.field[i] = -a * q[i] - dforce[i];
  }
  return out;
}

}  // namespace

double whf_stable_dt(const WhfState& state, const WhfSpec& spec, double xi_dot) {
  const Spectral sp(state.rho.grid);
  const auto u = state.form == WhfForm::kPotential ? sp.derivative(state.field, 0) : state.field;
  const double c = std::abs(1.0 + spec.eta * xi_dot) * sup_norm(u);
  if (c == 0.0) return std::numeric_limits<double>::infinity();
  return 2.8 * state.rho.grid.spacing() / (M_PI * c);
}

WhfState generalized_whf_step(const WhfState& state, const WhfSpec& spec, double xi_dot, double dt,
                              WhfStepReport* report, double floor) {
  const GridSpec& g = state.rho.grid;
  g.validate();
  if (g.dim != 1) throw ConfigError("generalized_whf_step supports one-dimensional grids only");
  if (state.field.size() != g.size()) throw ConfigError("generalized_whf_step: field size mismatch");
  if (!(dt > 0.0)) throw DomainError("generalized_whf_step: dt must be positive");
  require_floor(state.rho, floor, "generalized_whf_step");
  const double max_dt = whf_stable_dt(state, spec, xi_dot);
  if (dt > max_dt) throw StabilityError("generalized_whf_step: dt exceeds the CFL bound", 0.9 * max_dt);

  const Spectral sp(g);
  const std::size_t N = g.size();
  auto axpy = [N](const std::vector<double>& y, double s, const std::vector<double>& k) {
    std::vector<double> r(N);
    for (std::size_t i = 0; i < N; ++i) r[i] = y[i] + s * k[i];
    return r;
  };
  const auto& r0 = state.rho.values;
  const auto& f0 = state.field;
  const auto k1 = whf_rhs(sp, spec, state.form, r0, f0, xi_dot);
  const auto k2 = whf_rhs(sp, spec, state.form, axpy(r0, dt / 2, k1.rho), axpy(f0, dt / 2, k1.field), xi_dot);
  const auto k3 = whf_rhs(sp, spec, state.form, axpy(r0, dt / 2, k2.rho), axpy(f0, dt / 2, k2.field), xi_dot);
  const auto k4 = whf_rhs(sp, spec, state.form, axpy(r0, dt, k3.rho), axpy(f0, dt, k3.field), xi_dot);

  WhfState next{{g, std::vector<double>(N)}, std::vector<double>(N), state.form, state.t + dt};
  for (std::size_t i = 0; i < N; ++i) {
    next.rho.values[i] = r0[i] + dt / 6 * (k1.rho[i] + 2 * k2.rho[i] + 2 * k3.rho[i] + k4.rho[i]);
    next.field[i] = f0[i] + dt / 6 * (k1.field[i] + 2 * k2.field[i] + 2 * k3.field[i] + k4.field[i]);
  }
  for (std::size_t i = 0; i < N; ++i)
    if (!std::isfinite(next.rho.values[i]) || !std::isfinite(next.field[i]))
      throw EvaluationError("generalized_whf_step: non-finite state at node " + std::to_string(i));
  WhfStepReport rep;
  rep.max_dt = max_dt;
  rep.mass_before_renormalization = next.rho.mass();
  for (double& v : next.rho.values)
    if (v < floor) {
      rep.clipped_mass += (floor - v) * g.cell_volume();
      v = floor;
    }
  next.rho.normalize();
  if (state.form == WhfForm::kPotential) remove_mean(next.field);
  if (report) *report = rep;
  return next;
}

std::vector<WhfState> whf_evolve(const WhfState& state0, const WhfSpec& spec,
                                 const std::optional<WongZakaiMesh>& mesh, double dt, int steps, int stride) {
  if (steps < 0 || stride < 1) throw ConfigError("whf_evolve: steps must be >= 0 and stride >= 1");
  std::vector<WhfState> out{state0};
  WhfState s = state0;
  for (int k = 0; k < steps; ++k) {
    double xi_dot = 0.0;
    if (mesh) {
      const std::size_t c0 = mesh->cell_of(std::min(s.t + 1e-9 * dt, mesh->horizon()));
      const std::size_t c1 = mesh->cell_of(std::min(s.t + dt * (1 - 1e-9), mesh->horizon()));
      if (c0 != c1) throw ConfigError("whf_evolve: step straddles a Wong-Zakai node");
      xi_dot = mesh->cell_slope(c0);
    }
    const double t_next = state0.t + (k + 1) * dt;
    s = generalized_whf_step(s, spec, xi_dot, dt);
    s.t = t_next;
    if ((k + 1) % stride == 0) out.push_back(s);
  }
  return out;
}

double whf_kinetic_energy(const WhfState& state) {
  const Spectral sp(state.rho.grid);
  const auto u = state.form == WhfForm::kPotential ? sp.derivative(state.field, 0) : state.field;
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += 0.5 * u[i] * u[i] * state.rho.values[i];
  return s * state.rho.grid.cell_volume();
}

ContinuityResidual continuity_residual(const std::vector<DensityField>& rho, const std::vector<VelocityField>& v,
                                       double t0, double dt) {
  if (rho.size() != v.size()) throw ConfigError("continuity_residual: series lengths differ");
  if (rho.size() < 3) throw InsufficientDataError("continuity_residual needs at least 3 times");
  const GridSpec& g = rho.front().grid;
  const double w = 2.0 * M_PI / g.period;
  std::vector<std::array<int, 2>> modes;
  if (g.dim == 1) modes = {{1, 0}, {2, 0}, {3, 0}};
  else modes = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  const std::size_t N = g.size();
  auto moment = [&](const DensityField& r, const std::array<int, 2>& m, bool sine) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double ph = w * m[0] * g.coordinate(i, 0);
      if (g.dim == 2) ph += w * m[1] * g.coordinate(i, 1);
      s += (sine ? std::sin(ph) : std::cos(ph)) * r.values[i];
    }
    return s * g.cell_volume();
  };
  ContinuityResidual out;
  for (std::size_t k = 1; k + 1 < rho.size(); ++k) {
    double worst = 0.0;
    for (const auto& m : modes)
      for (bool sine : {true, false}) {
        const double lhs = (moment(rho[k + 1], m, sine) - moment(rho[k - 1], m, sine)) / (2 * dt);
        double rhs = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          double ph = w * m[0] * g.coordinate(i, 0);
          if (g.dim == 2) ph += w * m[1] * g.coordinate(i, 1);
          const double dpsi = sine ? std::cos(ph) : -std::sin(ph);
          double flux = w * m[0] * v[k].components[0][i];
          if (g.dim == 2) flux += w * m[1] * v[k].components[1][i];
          rhs += dpsi * flux * rho[k].values[i];
        }
        worst = std::max(worst, std::abs(lhs - rhs * g.cell_volume()));
      }
    out.times.push_back(t0 + k * dt);
    out.residual.push_back(worst);
  }
  return out;
}

}  // namespace swhf
