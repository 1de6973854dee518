#include "swhf/phase_flow.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

#include "swhf/binary_io.hpp"
#include "swhf/errors.hpp"

namespace swhf {

ScalarPotential ScalarPotential::zero() {
  ScalarPotential s;
  s.value = [](const Vec&) { return 0.0; };
  s.gradient = [](const Vec&, Eigen::Ref<Vec> g) { g.setZero(); };
  s.hessian = [](const Vec&, Eigen::Ref<Mat> h) { h.setZero(); };
  return s;
}

ScalarPotential ScalarPotential::separable(std::function<double(double)> h, std::function<double(double)> dh,
                                           std::function<double(double)> d2h) {
  ScalarPotential s;
  s.value = [h](const Vec& x) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) acc += h(x[i]);
    return acc;
  };
  s.gradient = [dh](const Vec& x, Eigen::Ref<Vec> g) {
    for (Eigen::Index i = 0; i < x.size(); ++i) g[i] = dh(x[i]);
  };
  if (d2h) {
    s.hessian = [d2h](const Vec& x, Eigen::Ref<Mat> m) {
      m.setZero();
      for (Eigen::Index i = 0; i < x.size(); ++i) m(i, i) = d2h(x[i]);
    };
  }
  return s;
}

ScalarPotential ScalarPotential::quadratic(Mat k, Vec b) {
  ScalarPotential s;
  s.value = [k, b](const Vec& x) { return 0.5 * x.dot(k * x) + b.dot(x); };
  s.gradient = [k, b](const Vec& x, Eigen::Ref<Vec> g) { g = 0.5 * (k + k.transpose()) * x + b; };
  s.hessian = [k](const Vec&, Eigen::Ref<Mat> h) { h = 0.5 * (k + k.transpose()); };
  return s;
}

InverseMetric InverseMetric::diagonal(std::function<double(double)> m, std::function<double(double)> dm,
                                      std::function<double(double)> d2m) {
  InverseMetric out;
  out.kind = Kind::kDiagonal;
  out.value = [m](const Vec& x, Eigen::Ref<Mat> g) {
    g.setZero();
    for (Eigen::Index i = 0; i < x.size(); ++i) g(i, i) = 1.0 / m(x[i]);
  };
  out.derivative = [m, dm](const Vec& x, std::vector<Mat>& d) {
    const auto n = x.size();
    d.assign(static_cast<std::size_t>(n), Mat::Zero(n, n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mi = m(x[i]);
      d[static_cast<std::size_t>(i)](i, i) = -dm(x[i]) / (mi * mi);
    }
  };
  if (d2m) {
    out.second_derivative = [m, dm, d2m](const Vec& x, std::vector<Mat>& d) {
      const auto n = x.size();
      d.assign(static_cast<std::size_t>(n * n), Mat::Zero(n, n));
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mi = m(x[i]);
        const double d1 = dm(x[i]);
        d[static_cast<std::size_t>(i * n + i)](i, i) = 2.0 * d1 * d1 / (mi * mi * mi) - d2m(x[i]) / (mi * mi);
      }
    };
  }
  return out;
}

InverseMetric InverseMetric::from_metric(std::function<void(const Vec&, Eigen::Ref<Mat>)> g,
                                         std::function<void(const Vec&, std::vector<Mat>&)> dg,
                                         std::function<void(const Vec&, std::vector<Mat>&)> d2g) {
  InverseMetric out;
  out.kind = Kind::kFull;
  out.value = [g](const Vec& x, Eigen::Ref<Mat> inv) {
    Mat m(x.size(), x.size());
    g(x, m);
    inv = m.ldlt().solve(Mat::Identity(x.size(), x.size()));
  };
  out.derivative = [g, dg](const Vec& x, std::vector<Mat>& d) {
    const auto n = x.size();
    Mat m(n, n);
    g(x, m);
    const Mat inv = m.ldlt().solve(Mat::Identity(n, n));
    std::vector<Mat> raw;
    dg(x, raw);
    d.resize(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -inv * raw[i] * inv;
  };
  if (d2g) {
    out.second_derivative = [g, dg, d2g](const Vec& x, std::vector<Mat>& d) {
      const auto n = x.size();
      Mat m(n, n);
      g(x, m);
      const Mat inv = m.ldlt().solve(Mat::Identity(n, n));
      std::vector<Mat> d1;
      std::vector<Mat> d2;
      dg(x, d1);
      d2g(x, d2);
      d.resize(static_cast<std::size_t>(n * n));
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          const auto ij = static_cast<std::size_t>(i * n + j);
          const Mat& gi = d1[static_cast<std::size_t>(i)];
          const Mat& gj = d1[static_cast<std::size_t>(j)];
          d[ij] = inv * (gi * inv * gj + gj * inv * gi - d2[ij]) * inv;
        }
    };
  }
  return out;
}

void HamiltonianSpec::validate() const {
  if (dim < 1) throw ConfigError("Hamiltonian dimension must be >= 1");
  if (!potential.value || !potential.gradient) throw ConfigError("Hamiltonian potential f needs value and gradient");
  if (!noise_potential.value || !noise_potential.gradient)
    throw ConfigError("Hamiltonian noise potential sigma needs value and gradient");
  auto check_metric = [](const InverseMetric& m, const char* name) {
    if (!m.is_identity() && (!m.value || !m.derivative))
      throw ConfigError(std::string(name) + " needs value and derivative callables");
  };
  check_metric(metric, "metric");
  if (noise_metric) check_metric(*noise_metric, "noise metric");
  if (domain.torus && domain.period.size() != dim) throw ConfigError("torus period must have one entry per dimension");
  if (!std::isfinite(eta)) throw ConfigError("noise intensity eta must be finite");
}

bool HamiltonianSpec::has_hessians() const {
  auto metric_ok = [](const InverseMetric& m) { return m.is_identity() || static_cast<bool>(m.second_derivative); };
  return potential.has_hessian() && noise_potential.has_hessian() && metric_ok(metric) &&
         (!noise_metric || metric_ok(*noise_metric));
}

namespace {

/// Vector fields a = (dpH0, -dxH0), b = (dpH1, -dxH1) and their Jacobians,
/// with buffers reused across calls.
class Evaluator {
 public:
  explicit Evaluator(const HamiltonianSpec& spec)
      : spec_(spec), d_(spec.dim), x_(d_), p_(d_), g_(d_), gp_(d_), gx_(d_), G_(d_, d_), hxx_(d_, d_),
        hxp_(d_, d_), hpp_(d_, d_), hs_(d_, d_) {}

  int dim() const { return d_; }

  double h0(const Vec& z) {
    split(z);
    return kinetic_value(spec_.metric) + spec_.potential.value(x_);
  }

  double h1(const Vec& z) {
    split(z);
    double v = spec_.noise_potential.value(x_);
    if (spec_.noise_metric) v += kinetic_value(*spec_.noise_metric);
    return spec_.eta * v;
  }

  /// Gradients of H0 into (gx, gp).
  void grad_h0(const Vec& z, Vec& gx, Vec& gp) {
    split(z);
    kinetic_grad(spec_.metric, gx, gp);
    spec_.potential.gradient(x_, g_);
    gx += g_;
  }

  void grad_h1(const Vec& z, Vec& gx, Vec& gp) {
    split(z);
    if (spec_.noise_metric) {
      kinetic_grad(*spec_.noise_metric, gx, gp);
    } else {
      gx.setZero();
      gp.setZero();
    }
    spec_.noise_potential.gradient(x_, g_);
    gx += g_;
    gx *= spec_.eta;
    gp *= spec_.eta;
  }

  void fields(const Vec& z, Vec& a, Vec& b) {
    grad_h0(z, gx_, gp_);
    a.head(d_) = gp_;
    a.tail(d_) = -gx_;
    grad_h1(z, gx_, gp_);
    b.head(d_) = gp_;
    b.tail(d_) = -gx_;
  }

  /// a + c b
  void combined(const Vec& z, double c, Vec& out, Vec& tmp) {
    fields(z, out, tmp);
    out += c * tmp;
  }

  /// Jacobians of a and b with respect to z.
  void field_jacobians(const Vec& z, Mat& ja, Mat& jb) {
    split(z);
    kinetic_hessian(spec_.metric, hxx_, hxp_, hpp_);
    spec_.potential.hessian(x_, hs_);
    hxx_ += hs_;
    assemble(ja);
    if (spec_.noise_metric) {
      kinetic_hessian(*spec_.noise_metric, hxx_, hxp_, hpp_);
    } else {
      hxx_.setZero();
      hxp_.setZero();
      hpp_.setZero();
    }
    spec_.noise_potential.hessian(x_, hs_);
    hxx_ += hs_;
    hxx_ *= spec_.eta;
    hxp_ *= spec_.eta;
    hpp_ *= spec_.eta;
    assemble(jb);
  }

  // Exposed for the growth diagnostic.
  void h0_blocks(const Vec& z, Mat& ginv, Vec& kinetic_x, Mat& hxp) {
    split(z);
    kinetic_grad(spec_.metric, kinetic_x, gp_);
    metric_value(spec_.metric, ginv);
    kinetic_hessian_xp(spec_.metric, hxp);
  }

 private:
  void split(const Vec& z) {
    x_ = z.head(d_);
    p_ = z.tail(d_);
  }

  void metric_value(const InverseMetric& m, Mat& out) {
    if (m.is_identity()) {
      out.setIdentity(d_, d_);
    } else {
      out.resize(d_, d_);
      m.value(x_, out);
    }
  }

  double kinetic_value(const InverseMetric& m) {
    if (m.is_identity()) return 0.5 * p_.squaredNorm();
    m.value(x_, G_);
    return 0.5 * p_.dot(G_ * p_);
  }

  void kinetic_grad(const InverseMetric& m, Vec& gx, Vec& gp) {
    if (m.is_identity()) {
      gp = p_;
      gx.setZero(d_);
      return;
    }
    m.value(x_, G_);
    gp = G_ * p_;
    m.derivative(x_, dG_);
    gx.resize(d_);
    for (int i = 0; i < d_; ++i) gx[i] = 0.5 * p_.dot(dG_[static_cast<std::size_t>(i)] * p_);
  }

  void kinetic_hessian_xp(const InverseMetric& m, Mat& hxp) {
    hxp.setZero(d_, d_);
    if (m.is_identity()) return;
    m.derivative(x_, dG_);
    for (int i = 0; i < d_; ++i) hxp.row(i) = (dG_[static_cast<std::size_t>(i)] * p_).transpose();
  }

  void kinetic_hessian(const InverseMetric& m, Mat& hxx, Mat& hxp, Mat& hpp) {
    if (m.is_identity()) {
      hxx.setZero();
      hxp.setZero();
      hpp.setIdentity();
      return;
    }
    m.value(x_, hpp);
    kinetic_hessian_xp(m, hxp);
    m.second_derivative(x_, d2G_);
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j) hxx(i, j) = 0.5 * p_.dot(d2G_[static_cast<std::size_t>(i * d_ + j)] * p_);
  }

  // D(dpH, -dxH) from the Hessian blocks in hxx_, hxp_, hpp_.
  void assemble(Mat& j) {
    j.resize(2 * d_, 2 * d_);
    j.topLeftCorner(d_, d_) = hxp_.transpose();
    j.topRightCorner(d_, d_) = hpp_;
    j.bottomLeftCorner(d_, d_) = -hxx_;
    j.bottomRightCorner(d_, d_) = -hxp_;
  }

  const HamiltonianSpec& spec_;
  int d_;
  Vec x_, p_, g_, gp_, gx_;
  Mat G_, hxx_, hxp_, hpp_, hs_;
  std::vector<Mat> dG_, d2G_;
};

Vec pack(const PhaseState& s) {
  Vec z(s.x.size() * 2);
  z << s.x, s.p;
  return z;
}

Vec wrap_position(const Domain& domain, Vec x) {
  if (!domain.torus) return x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double L = domain.period[i];
    x[i] -= L * std::floor(x[i] / L);
    if (x[i] >= L) x[i] -= L;
  }
  return x;
}

class Recorder {
 public:
  Recorder(const HamiltonianSpec& spec, Evaluator& ev, FlowResult& out, bool jac)
      : spec_(spec), ev_(ev), out_(out), jac_(jac) {}

  void record(double t, const Vec& z, const Mat& j) {
    const int d = spec_.dim;
    out_.times.push_back(t);
    out_.x.push_back(wrap_position(spec_.domain, z.head(d)));
    out_.p.push_back(z.tail(d));
    out_.h0.push_back(ev_.h0(z));
    out_.h1.push_back(ev_.h1(z));
    if (jac_) out_.jacobian.push_back(j);
  }

 private:
  const HamiltonianSpec& spec_;
  Evaluator& ev_;
  FlowResult& out_;
  bool jac_;
};

void check_options(const HamiltonianSpec& spec, const PhaseState& s0, const FlowOptions& o) {
  spec.validate();
  if (s0.x.size() != spec.dim || s0.p.size() != spec.dim)
    throw ConfigError("initial state dimension does not match the Hamiltonian");
  if (!s0.x.allFinite() || !s0.p.allFinite()) throw EvaluationError("initial state is not finite");
  if (o.record_stride < 1) throw ConfigError("record_stride must be >= 1");
  if (o.jacobians && !spec.has_hessians())
    throw ConfigError("variational flow needs Hessians of f, sigma and second derivatives of any metric");
}

// Gauss-Legendre nodes and weights on [0, 1].
constexpr std::array<double, 5> kGlNodes = {0.04691007703066800, 0.23076534494715845, 0.5, 0.76923465505284155,
                                            0.95308992296933200};
constexpr std::array<double, 5> kGlWeights = {0.11846344252809454, 0.23931433524968324, 0.28444444444444444,
                                              0.23931433524968324, 0.11846344252809454};

}  // namespace

HamiltonianEval hamiltonian_eval(const HamiltonianSpec& spec, const PhaseState& state) {
  spec.validate();
  if (state.x.size() != spec.dim || state.p.size() != spec.dim)
    throw ConfigError("state dimension does not match the Hamiltonian");
  Evaluator ev(spec);
  const Vec z = pack(state);
  HamiltonianEval out;
  out.h0 = ev.h0(z);
  out.h1 = ev.h1(z);
  out.dx_h0.resize(spec.dim);
  out.dp_h0.resize(spec.dim);
  out.dx_h1.resize(spec.dim);
  out.dp_h1.resize(spec.dim);
  ev.grad_h0(z, out.dx_h0, out.dp_h0);
  ev.grad_h1(z, out.dx_h1, out.dp_h1);
  auto check = [](const Vec& v, const char* name) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i]))
        throw EvaluationError(std::string("non-finite ") + name + " at coordinate " + std::to_string(i));
  };
  if (!std::isfinite(out.h0)) throw EvaluationError("non-finite H0");
  if (!std::isfinite(out.h1)) throw EvaluationError("non-finite H1");
  check(out.dx_h0, "dxH0");
  check(out.dp_h0, "dpH0");
  check(out.dx_h1, "dxH1");
  check(out.dp_h1, "dpH1");
  return out;
}

FlowResult wz_flow(const HamiltonianSpec& spec, const PhaseState& state0, const WongZakaiMesh& mesh,
                   int substeps_per_cell, const FlowOptions& options) {
  check_options(spec, state0, options);
  if (substeps_per_cell < 1) throw ConfigError("substeps_per_cell must be >= 1");
  if (options.noise_component < 0 || options.noise_component >= mesh.base->dim())
    throw ConfigError("noise component out of range");
  const double horizon = mesh.horizon();
  const double end = options.end_time.value_or(horizon);
  if (!(end >= 0.0 && end <= horizon * (1 + 1e-14))) throw DomainError("wz_flow: end time outside [0, T]");

  const int d = spec.dim;
  const int n = 2 * d;
  Evaluator ev(spec);
  FlowResult out;
  out.dim = d;
  Recorder rec(spec, ev, out, options.jacobians);

  Vec z = pack(state0);
  Mat jac = Mat::Identity(n, n);
  Vec k1(n), k2(n), k3(n), k4(n), zs(n), tmp(n);
  Mat ja(n, n), jb(n, n), l1(n, n), l2(n, n), l3(n, n), l4(n, n), js(n, n);

  rec.record(state0.t, z, jac);
  const double delta = mesh.delta();
  const double h_full = delta / substeps_per_cell;
  const double eps = 1e-12 * h_full;
  std::size_t step = 0;
  double t = 0.0;
  for (std::size_t k = 0; k < mesh.cells() && t < end - eps; ++k) {
    const double c = mesh.cell_slope(k, options.noise_component);
    for (int j = 0; j < substeps_per_cell; ++j) {
      const double t0 = static_cast<double>(k) * delta + j * h_full;
      if (t0 >= end - eps) break;
      const bool partial = t0 + h_full > end + eps;
      const double h = partial ? end - t0 : h_full;
      auto rhs = [&](const Vec& zz, Vec& kk, const Mat* jj, Mat* ll) {
        ev.combined(zz, c, kk, tmp);
        if (jj != nullptr) {
          ev.field_jacobians(zz, ja, jb);
          ja += c * jb;
          *ll = ja * (*jj);
        }
      };
      const bool J = options.jacobians;
      rhs(z, k1, J ? &jac : nullptr, &l1);
      zs = z + 0.5 * h * k1;
      if (J) js = jac + 0.5 * h * l1;
      rhs(zs, k2, J ? &js : nullptr, &l2);
      zs = z + 0.5 * h * k2;
      if (J) js = jac + 0.5 * h * l2;
      rhs(zs, k3, J ? &js : nullptr, &l3);
      zs = z + h * k3;
      if (J) js = jac + h * l3;
      rhs(zs, k4, J ? &js : nullptr, &l4);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (J) jac += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
      t = partial ? end : (j + 1 == substeps_per_cell ? static_cast<double>(k + 1) * delta : t0 + h_full);
      ++step;
      if (!z.allFinite() || (J && !jac.allFinite())) {
        out.status = {FlowStatusKind::kNonFinite, state0.t + t};
        return out;
      }
      const bool last = t >= end - eps;
      if (step % static_cast<std::size_t>(options.record_stride) == 0 || last) rec.record(state0.t + t, z, jac);
    }
  }
  return out;
}

FlowResult strat_flow(const HamiltonianSpec& spec, const PhaseState& state0, const BrownianPath& path, int dt_level,
                      const FlowOptions& options) {
  check_options(spec, state0, options);
  if (dt_level < 0 || dt_level > path.level())
    throw DomainError("strat_flow: dt level must lie in [0, path level]");
  if (options.noise_component < 0 || options.noise_component >= path.dim())
    throw ConfigError("noise component out of range");
  const std::size_t steps_total = std::size_t{1} << dt_level;
  const double dt = path.horizon() / static_cast<double>(steps_total);
  const double end = options.end_time.value_or(path.horizon());
  const double steps_real = end / dt;
  const auto steps = static_cast<std::size_t>(std::llround(steps_real));
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-9 || steps > steps_total)
    throw DomainError("strat_flow: end time must be a multiple of dt within the path horizon");
  const std::size_t stride = std::size_t{1} << (path.level() - dt_level);

  const int d = spec.dim;
  const int n = 2 * d;
  Evaluator ev(spec);
  FlowResult out;
  out.dim = d;
  Recorder rec(spec, ev, out, options.jacobians);
  const bool J = options.jacobians;

  Vec z = pack(state0);
  Mat jac = Mat::Identity(n, n);
  Vec a0(n), b0(n), a1(n), b1(n), zp(n), znew(n), acc(n), zq(n);
  Mat ja(n, n), jb(n, n), m0(n, n), m1(n, n), jp(n, n), lhs(n, n), rhs(n, n);
  rec.record(state0.t, z, jac);

  for (std::size_t s = 0; s < steps; ++s) {
    const double db = path.value((s + 1) * stride, options.noise_component) -
                      path.value(s * stride, options.noise_component);
    if (options.scheme == StratScheme::kHeun) {
      ev.fields(z, a0, b0);
      if (J) {
        ev.field_jacobians(z, ja, jb);
        m0 = ja * dt + jb * db;
      }
      zp = z + a0 * dt + b0 * db;
      ev.fields(zp, a1, b1);
      if (J) {
        jp = jac + m0 * jac;
        ev.field_jacobians(zp, ja, jb);
        m1 = ja * dt + jb * db;
        jac = jac + 0.5 * (m0 * jac + m1 * jp);
      }
      z = z + 0.5 * (a0 + a1) * dt + 0.5 * (b0 + b1) * db;
    } else {
      // Averaged vector field: z1 = z0 + int_0^1 [a dt + b dB](z0 + th (z1 - z0)) dth.
      ev.fields(z, a0, b0);
      Vec z1 = z + a0 * dt + b0 * db;
      bool converged = false;
      for (int it = 0; it < options.implicit_max_iterations; ++it) {
        acc.setZero();
        for (std::size_t q = 0; q < kGlNodes.size(); ++q) {
          zq = z + kGlNodes[q] * (z1 - z);
          ev.fields(zq, a1, b1);
          acc += kGlWeights[q] * (a1 * dt + b1 * db);
        }
        znew = z + acc;
        const double change = (znew - z1).lpNorm<Eigen::Infinity>();
        z1 = znew;
        if (!z1.allFinite()) break;
        if (change <= options.implicit_tolerance * (1.0 + z1.lpNorm<Eigen::Infinity>())) {
          converged = true;
          break;
        }
      }
      if (!converged && z1.allFinite())
        throw ConvergenceError("AVF fixed-point iteration did not converge", (znew - z1).norm());
      if (J) {
        lhs.setIdentity();
        rhs.setIdentity();
        for (std::size_t q = 0; q < kGlNodes.size(); ++q) {
          zq = z + kGlNodes[q] * (z1 - z);
          ev.field_jacobians(zq, ja, jb);
          m0 = kGlWeights[q] * (ja * dt + jb * db);
          lhs -= kGlNodes[q] * m0;
          rhs += (1.0 - kGlNodes[q]) * m0;
        }
        jac = lhs.partialPivLu().solve(rhs * jac);
      }
      z = z1;
    }
    const double t = static_cast<double>(s + 1) * dt;
    if (!z.allFinite() || (J && !jac.allFinite())) {
      out.status = {FlowStatusKind::kNonFinite, state0.t + t};
      return out;
    }
    if ((s + 1) % static_cast<std::size_t>(options.record_stride) == 0 || s + 1 == steps)
      rec.record(state0.t + t, z, jac);
  }
  return out;
}

double driver_horizon(const FlowDriver& driver) {
  return std::visit(
      [](const auto& dr) {
        using T = std::decay_t<decltype(dr)>;
        if constexpr (std::is_same_v<T, WzDriver>)
          return dr.mesh.horizon();
        else
          return dr.path->horizon();
      },
      driver);
}

FlowResult run_flow(const HamiltonianSpec& spec, const PhaseState& state0, const FlowDriver& driver,
                    const FlowOptions& options) {
  return std::visit(
      [&](const auto& dr) {
        using T = std::decay_t<decltype(dr)>;
        if constexpr (std::is_same_v<T, WzDriver>) {
          return wz_flow(spec, state0, dr.mesh, dr.substeps_per_cell, options);
        } else {
          if (!dr.path) throw ConfigError("Stratonovich driver has no path");
          return strat_flow(spec, state0, *dr.path, dr.dt_level, options);
        }
      },
      driver);
}

FlowResult variational_flow(const HamiltonianSpec& spec, const PhaseState& state0, const FlowDriver& driver,
                            FlowOptions options) {
  options.jacobians = true;
  return run_flow(spec, state0, driver, options);
}

std::optional<double> diffeo_loss_time(const FlowResult& result, double det_threshold,
                                       const std::optional<Mat>& initial_velocity_jacobian) {
  if (result.jacobian.size() != result.times.size()) throw ConfigError("diffeo_loss_time needs Jacobians");
  for (std::size_t i = 0; i < result.times.size(); ++i) {
    Mat m = result.jxx(i);
    if (initial_velocity_jacobian) m += result.jxp(i) * (*initial_velocity_jacobian);
    if (m.determinant() <= det_threshold) return result.times[i];
  }
  return std::nullopt;
}

GrowthReport growth_diagnostic(const HamiltonianSpec& spec, const std::vector<PhaseState>& samples, double c1_const,
                               double c1_slope) {
  spec.validate();
  if (!spec.noise_potential.has_hessian()) throw ConfigError("growth diagnostic needs the Hessian of sigma");
  const int d = spec.dim;
  Evaluator ev(spec);
  GrowthReport rep;
  Mat ginv(d, d), hxp(d, d), hs(d, d);
  Vec kin_x(d), gs(d), gf(d);
  const double eta = std::abs(spec.eta);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const PhaseState& st = samples[s];
    if (!st.x.allFinite() || !st.p.allFinite()) throw EvaluationError("growth diagnostic sample is not finite");
    const Vec z = pack(st);
    ev.h0_blocks(z, ginv, kin_x, hxp);
    spec.noise_potential.gradient(st.x, gs);
    spec.noise_potential.hessian(st.x, hs);
    spec.potential.gradient(st.x, gf);
    const Vec gp = ginv * st.p;
    double lhs = 0.0;
    lhs += eta * eta * std::abs(gs.dot(ginv * gs));
    lhs += eta * std::abs(st.p.dot(ginv * gs));
    lhs += eta * std::abs(gs.dot(ginv * (-kin_x - gf)));
    lhs += eta * std::abs(gp.dot(hxp * gs));
    lhs += eta * std::abs(gp.dot(hs * gp));
    const double bound = c1_const + c1_slope * ev.h0(z);
    double ratio = 0.0;
    if (lhs > 0.0) ratio = bound > 0.0 ? lhs / bound : std::numeric_limits<double>::infinity();
    rep.lhs.push_back(lhs);
    rep.bound.push_back(bound);
    if (s == 0 || ratio > rep.max_ratio) {
      rep.max_ratio = ratio;
      rep.argmax = s;
      rep.argmax_state = st;
    }
  }
  return rep;
}

EnergyExpansionReport energy_expansion_check(const HamiltonianSpec& spec, const FlowResult& result,
                                             const WongZakaiMesh& mesh, int noise_component) {
  spec.validate();
  const int d = spec.dim;
  Evaluator ev(spec);
  const std::size_t n = result.times.size();
  EnergyExpansionReport rep;
  if (n == 0) return rep;
  // {H0,H1} xi' at each sample; xi' is taken from the cell of the interval being integrated.
  std::vector<double> bracket(n);
  Vec gx0(d), gp0(d), gx1(d), gp1(d), z(2 * d);
  for (std::size_t i = 0; i < n; ++i) {
    z << result.x[i], result.p[i];
    ev.grad_h0(z, gx0, gp0);
    ev.grad_h1(z, gx1, gp1);
    bracket[i] = gx0.dot(gp1) - gp0.dot(gx1);
  }
  const double t0 = result.times.front();
  auto cell = [&](double a, double b) { return mesh.cell_of(0.5 * (a + b) - t0); };
  double integral = 0.0;
  rep.times.push_back(result.times[0]);
  rep.residual.push_back(0.0);
  std::size_t i = 0;
  while (i + 1 < n) {
    const double ta = result.times[i];
    const double tb = result.times[i + 1];
    const std::size_t k = cell(ta, tb);
    const double slope = mesh.cell_slope(k, noise_component);
    if (i + 2 < n) {
      const double tc = result.times[i + 2];
      if (cell(tb, tc) == k && std::abs((tc - tb) - (tb - ta)) <= 1e-12 * (tb - ta)) {
        integral += slope * (tc - ta) / 6.0 * (bracket[i] + 4.0 * bracket[i + 1] + bracket[i + 2]);
        i += 2;
        rep.times.push_back(result.times[i]);
        rep.residual.push_back(result.h0[i] - result.h0[0] - integral);
        continue;
      }
    }
    integral += slope * 0.5 * (tb - ta) * (bracket[i] + bracket[i + 1]);
    i += 1;
    rep.times.push_back(result.times[i]);
    rep.residual.push_back(result.h0[i] - result.h0[0] - integral);
  }
  for (double r : rep.residual) rep.sup_residual = std::max(rep.sup_residual, std::abs(r));
  return rep;
}

std::pair<double, double> metric_eigen_bounds(const InverseMetric& metric, int dim, const std::vector<Vec>& samples) {
  if (metric.is_identity()) return {1.0, 1.0};
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  Mat g(dim, dim);
  for (const Vec& x : samples) {
    metric.value(x, g);
    Eigen::SelfAdjointEigenSolver<Mat> es(g);
    // eigenvalues of g are reciprocals of those of g^{-1}
    lo = std::min(lo, 1.0 / es.eigenvalues().maxCoeff());
    hi = std::max(hi, 1.0 / es.eigenvalues().minCoeff());
  }
  return {lo, hi};
}

void write_trajectory_csv(const FlowResult& result, std::ostream& out) {
  const int d = result.dim;
  out << "t";
  for (int i = 0; i < d; ++i) out << ",x" << i;
  for (int i = 0; i < d; ++i) out << ",p" << i;
  out << ",H0,H1\n" << std::setprecision(17);
  for (std::size_t s = 0; s < result.times.size(); ++s) {
    out << result.times[s];
    for (int i = 0; i < d; ++i) out << ',' << result.x[s][i];
    for (int i = 0; i < d; ++i) out << ',' << result.p[s][i];
    out << ',' << result.h0[s] << ',' << result.h1[s] << '\n';
  }
}

void write_trajectory_binary(const FlowResult& result, std::ostream& out) {
  binio::put_magic(out, "SWHFTRAJ");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(result.dim));
  binio::put<std::uint64_t>(out, result.times.size());
  for (std::size_t s = 0; s < result.times.size(); ++s) {
    binio::put<double>(out, result.times[s]);
    for (int i = 0; i < result.dim; ++i) binio::put<double>(out, result.x[s][i]);
    for (int i = 0; i < result.dim; ++i) binio::put<double>(out, result.p[s][i]);
    binio::put<double>(out, result.h0[s]);
    binio::put<double>(out, result.h1[s]);
  }
  if (!out) throw IoError("failed writing trajectory container");
}

FlowResult read_trajectory_binary(std::istream& in) {
  binio::expect_magic(in, "SWHFTRAJ");
  FlowResult r;
  r.dim = static_cast<int>(binio::get<std::uint32_t>(in));
  const auto n = binio::get<std::uint64_t>(in);
  for (std::uint64_t s = 0; s < n; ++s) {
    r.times.push_back(binio::get<double>(in));
    Vec x(r.dim), p(r.dim);
    for (int i = 0; i < r.dim; ++i) x[i] = binio::get<double>(in);
    for (int i = 0; i < r.dim; ++i) p[i] = binio::get<double>(in);
    r.x.push_back(x);
    r.p.push_back(p);
    r.h0.push_back(binio::get<double>(in));
    r.h1.push_back(binio::get<double>(in));
  }
  return r;
}

}  // namespace swhf
