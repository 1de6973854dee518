#include "swhf/vlasov.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "swhf/errors.hpp"
#include "swhf/parallel.hpp"
#include "swhf/philox.hpp"
#include "swhf/stats.hpp"

namespace swhf {

namespace {

double monomial(double p, int m) { return m < 0 ? 0.0 : std::pow(p, m); }

void require_1d(const HamiltonianSpec& spec, const char* who) {
  if (spec.dim != 1) throw ConfigError(std::string(who) + " supports one-dimensional phase space only");
}

struct Moments {
  std::vector<double> phi;        // <phi>
  std::vector<double> generator;  // <dx phi dp H0 - dp phi dx H0>
  std::vector<double> noise;      // <dx phi dp H1 - dp phi dx H1>
  std::vector<double> hessian;    // <1/2 (dx H1)^2 dpp phi>
};

/// Ensemble averages of every battery function at one state list.
Moments ensemble_moments(const HamiltonianSpec& spec, const std::vector<double>& xs, const std::vector<double>& ps,
                         const std::vector<TestFunction>& battery) {
  const std::size_t F = battery.size();
  Moments m{std::vector<double>(F, 0.0), std::vector<double>(F, 0.0), std::vector<double>(F, 0.0),
            std::vector<double>(F, 0.0)};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto e = hamiltonian_eval(spec, {Vec::Constant(1, xs[i]), Vec::Constant(1, ps[i]), 0.0});
    for (std::size_t f = 0; f < F; ++f) {
      const auto& phi = battery[f];
      const double fx = phi.dx(xs[i], ps[i]), fp = phi.dp(xs[i], ps[i]);
      m.phi[f] += phi.value(xs[i], ps[i]);
      m.generator[f] += fx * e.dp_h0[0] - fp * e.dx_h0[0];
      m.noise[f] += fx * e.dp_h1[0] - fp * e.dx_h1[0];
      m.hessian[f] += 0.5 * e.dx_h1[0] * e.dx_h1[0] * phi.dpp(xs[i], ps[i]);
    }
  }
  const double inv = xs.empty() ? 0.0 : 1.0 / static_cast<double>(xs.size());
  for (auto* v : {&m.phi, &m.generator, &m.noise, &m.hessian})
    for (double& x : *v) x *= inv;
  return m;
}


}  // namespace

double TestFunction::value(double x, double p) const {
  const double w = 2.0 * M_PI / period;
  const double t = trig == Trig::kOne ? 1.0 : (trig == Trig::kSin ? std::sin(w * x) : std::cos(w * x));
  return t * monomial(p, power) * std::exp(-p * p);
}

double TestFunction::dx(double x, double p) const {
  const double w = 2.0 * M_PI / period;
  const double t = trig == Trig::kOne ? 0.0 : (trig == Trig::kSin ? w * std::cos(w * x) : -w * std::sin(w * x));
  return t * monomial(p, power) * std::exp(-p * p);
}

double TestFunction::dp(double x, double p) const {
  const double w = 2.0 * M_PI / period;
  const double t = trig == Trig::kOne ? 1.0 : (trig == Trig::kSin ? std::sin(w * x) : std::cos(w * x));
  const int m = power;
  return t * (m * monomial(p, m - 1) - 2.0 * monomial(p, m + 1)) * std::exp(-p * p);
}

double TestFunction::dpp(double x, double p) const {
  const double w = 2.0 * M_PI / period;
  const double t = trig == Trig::kOne ? 1.0 : (trig == Trig::kSin ? std::sin(w * x) : std::cos(w * x));
  const int m = power;
  return t *
         (m * (m - 1) * monomial(p, m - 2) - 2.0 * (2 * m + 1) * monomial(p, m) + 4.0 * monomial(p, m + 2)) *
         std::exp(-p * p);
}

std::string TestFunction::name() const {
  const char* t = trig == Trig::kOne ? "1" : (trig == Trig::kSin ? "sin" : "cos");
  return std::string(t) + "*p^" + std::to_string(power) + "exp(-p^2)";
}

std::vector<TestFunction> default_battery(double period) {
  std::vector<TestFunction> out;
  for (auto t : {TestFunction::Trig::kOne, TestFunction::Trig::kSin, TestFunction::Trig::kCos})
    for (int m = 0; m < 4; ++m) out.push_back({t, m, period});
  return out;
}

PhaseEnsemble sample_ensemble(std::size_t n, double period, double p_mean, double p_sd, std::uint64_t seed) {
  if (n < 1) throw ConfigError("ensemble needs at least one particle");
  PhaseEnsemble e;
  e.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = period * keyed_uniform(seed, Stream::kSampling, 0, i, 0);
    const double p = p_mean + p_sd * keyed_normal(seed, Stream::kSampling, 1, i, 0);
    e.particles.push_back({Vec::Constant(1, x), Vec::Constant(1, p), 0.0});
  }
  return e;
}

ConditionalSeries evolve_conditional(const HamiltonianSpec& spec, const PhaseEnsemble& ensemble0,
                                     const WongZakaiMesh& mesh, int substeps_per_cell,
                                     const std::vector<double>& sample_times, int workers) {
  if (ensemble0.particles.empty()) throw ConfigError("evolve_conditional: empty ensemble");
  const double h = mesh.delta() / substeps_per_cell;
  std::vector<std::size_t> index;
  for (double t : sample_times) {
    const double k = std::round(t / h);
    if (std::abs(k * h - t) > 1e-9 * h || t < 0.0 || t > mesh.horizon() * (1 + 1e-14))
      throw DomainError("evolve_conditional: sample time off the substep grid");
    index.push_back(static_cast<std::size_t>(k));
  }
  const std::size_t N = ensemble0.particles.size();
  std::vector<FlowResult> runs(N);
  parallel_for(N, workers, [&](std::size_t i) { runs[i] = wz_flow(spec, ensemble0.particles[i], mesh, substeps_per_cell); });
  ConditionalSeries out;
  std::vector<char> keep(N, 1);
  for (std::size_t i = 0; i < N; ++i)
    if (!runs[i].completed()) {
      keep[i] = 0;
      ++out.excluded;
    }
  for (std::size_t s = 0; s < index.size(); ++s) {
    PhaseEnsemble e;
    e.time = sample_times[s];
    e.seed = ensemble0.seed;
    e.path_id = mesh.base->seed();
    for (std::size_t i = 0; i < N; ++i)
      if (keep[i]) e.particles.push_back({runs[i].x[index[s]], runs[i].p[index[s]], sample_times[s]});
    out.ensembles.push_back(std::move(e));
  }
  return out;
}

WeakResidualTable weak_residual_first_order(const HamiltonianSpec& spec, const ConditionalSeries& series,
                                           const WongZakaiMesh& mesh, const std::vector<TestFunction>& battery) {
  require_1d(spec, "weak_residual_first_order");
  const auto& ens = series.ensembles;
  if (ens.size() < 3) throw InsufficientDataError("weak_residual_first_order needs at least 3 sample times");
  const double dt = ens[1].time - ens[0].time;
  for (std::size_t k = 1; k < ens.size(); ++k)
    if (std::abs(ens[k].time - ens[k - 1].time - dt) > 1e-9 * dt)
      throw DomainError("weak_residual_first_order: sample times are not uniform");

  std::vector<Moments> mom;
  for (const auto& e : ens) {
    std::vector<double> xs, ps;
    for (const auto& s : e.particles) {
      xs.push_back(s.x[0]);
      ps.push_back(s.p[0]);
    }
    mom.push_back(ensemble_moments(spec, xs, ps, battery));
  }
  WeakResidualTable out;
  std::vector<double> acc(battery.size(), 0.0);
  std::size_t used = 0;
  for (std::size_t k = 1; k + 1 < ens.size(); ++k) {
    const double t = ens[k].time;
    const std::size_t c = mesh.cell_of(t);
    const double lo = c * mesh.delta(), hi = (c + 1) * mesh.delta();
    if (ens[k - 1].time < lo - 1e-12 * dt || ens[k + 1].time > hi + 1e-12 * dt) {
      out.skipped_times.push_back(t);
      continue;
    }
    const double slope = mesh.cell_slope(c);
    ++used;
    for (std::size_t f = 0; f < battery.size(); ++f) {
      WeakResidualRow r;
      r.time = t;
      r.phi = static_cast<int>(f);
      r.lhs = (mom[k + 1].phi[f] - mom[k - 1].phi[f]) / (2 * dt);
      r.rhs = mom[k].generator[f] + mom[k].noise[f] * slope;
      r.residual = r.lhs - r.rhs;
      r.ci_low = r.ci_high = r.residual;
      r.ablated = r.ablated_ci_low = r.ablated_ci_high = r.residual;
      acc[f] += std::abs(r.residual);
      out.rows.push_back(r);
    }
  }
  for (std::size_t f = 0; f < battery.size(); ++f) {
    WeakResidualRow r;
    r.phi = static_cast<int>(f);
    r.residual = used ? acc[f] / used : 0.0;
    out.aggregate.push_back(r);
  }
  return out;
}

WeakResidualTable weak_residual_second_order(const HamiltonianSpec& spec, const PhaseEnsemble& ensemble0,
                                            const std::vector<TestFunction>& battery,
                                            const SecondOrderOptions& options) {
  require_1d(spec, "weak_residual_second_order");
  if (spec.noise_metric) throw ConfigError("weak_residual_second_order requires H1 = eta sigma(x)");
  if (options.replications < 2) throw InsufficientDataError("weak_residual_second_order needs replications");
  const std::size_t steps = std::size_t{1} << options.dt_level;
  const std::size_t stride = static_cast<std::size_t>(options.sample_stride);
  if (stride < 1 || steps % stride != 0 || steps / stride < 2)
    throw InsufficientDataError("weak_residual_second_order needs at least 3 sample times");
  const std::size_t K = steps / stride + 1;
  const double dt = options.horizon / static_cast<double>(steps);
  const double ds = dt * static_cast<double>(stride);
  const std::size_t F = battery.size();
  const std::size_t R = static_cast<std::size_t>(options.replications);
  const std::size_t N = ensemble0.particles.size();

  // Per replication: residual and ablated residual per (interior sample, phi), plus lhs and rhs.
  struct Rep {
    std::vector<double> lhs, rhs, hess;
  };
  std::vector<Rep> reps(R);
  parallel_for(R, options.workers, [&](std::size_t r) {
    const auto path = sample_brownian(derive_seed(options.seed, r), options.horizon, options.dt_level);
    std::vector<std::vector<double>> xs(steps + 1, std::vector<double>(N)), ps = xs;
    for (std::size_t i = 0; i < N; ++i) {
      const auto run = strat_flow(spec, ensemble0.particles[i], path, options.dt_level);
      if (!run.completed()) throw EvaluationError("weak_residual_second_order: particle trajectory blew up");
      for (std::size_t j = 0; j <= steps; ++j) {
        xs[j][i] = run.x[j][0];
        ps[j][i] = run.p[j][0];
      }
    }
    std::vector<Moments> samples(K);
    std::vector<std::vector<double>> cv(steps + 1, std::vector<double>(F, 0.0));
    for (std::size_t j = 0; j <= steps; ++j) {
      const bool sampled = j % stride == 0;
      if (!sampled && !options.control_variate) continue;
      const Moments m = ensemble_moments(spec, xs[j], ps[j], battery);
      if (sampled) samples[j / stride] = m;
      if (j < steps)
        for (std::size_t f = 0; f < F; ++f) {
          const double db = path.value(j + 1) - path.value(j);
          cv[j + 1][f] = cv[j][f] + (options.control_variate ? m.noise[f] * db : 0.0);
        }
    }
    Rep& out = reps[r];
    for (std::size_t k = 1; k + 1 < K; ++k)
      for (std::size_t f = 0; f < F; ++f) {
        const double up = samples[k + 1].phi[f] - cv[(k + 1) * stride][f];
        const double down = samples[k - 1].phi[f] - cv[(k - 1) * stride][f];
        out.lhs.push_back((up - down) / (2 * ds));
        out.rhs.push_back(samples[k].generator[f]);
        out.hess.push_back(samples[k].hessian[f]);
      }
  });

  const std::size_t cells = (K - 2) * F;
  const int B = options.bootstrap_resamples;
  std::vector<std::vector<std::size_t>> draws(B, std::vector<std::size_t>(R));
  for (int b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      draws[b][r] = std::min<std::size_t>(
          R - 1, keyed_uniform(options.seed, Stream::kBootstrap, static_cast<std::uint32_t>(b), r, 0) * R);

  auto summarize = [&](const std::vector<double>& per_rep, double& mean, double& lo, double& hi) {
    mean = 0.0;
    for (double v : per_rep) mean += v;
    mean /= R;
    if (B == 0) {
      lo = hi = mean;
      return;
    }
    std::vector<double> boot(B, 0.0);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::size_t r : draws[b]) s += per_rep[r];
      boot[b] = s / R;
    }
    std::tie(lo, hi) = percentile_interval(std::move(boot), options.confidence);
  };

  WeakResidualTable out;
  std::vector<std::vector<double>> agg_res(F, std::vector<double>(R, 0.0)), agg_abl = agg_res;
  for (std::size_t c = 0; c < cells; ++c) {
    const std::size_t k = c / F + 1, f = c % F;
    std::vector<double> lhs(R), rhs(R), res(R), abl(R);
    for (std::size_t r = 0; r < R; ++r) {
      lhs[r] = reps[r].lhs[c];
      rhs[r] = reps[r].rhs[c] + reps[r].hess[c];
      res[r] = lhs[r] - rhs[r];
      abl[r] = lhs[r] - reps[r].rhs[c];
      agg_res[f][r] += res[r] / (K - 2);
      agg_abl[f][r] += abl[r] / (K - 2);
    }
    WeakResidualRow row;
    row.time = k * ds;
    row.phi = static_cast<int>(f);
    double unused_lo, unused_hi;
    summarize(lhs, row.lhs, unused_lo, unused_hi);
    summarize(rhs, row.rhs, unused_lo, unused_hi);
    summarize(res, row.residual, row.ci_low, row.ci_high);
    summarize(abl, row.ablated, row.ablated_ci_low, row.ablated_ci_high);
    out.rows.push_back(row);
  }
  for (std::size_t f = 0; f < F; ++f) {
    WeakResidualRow row;
    row.time = options.horizon;
    row.phi = static_cast<int>(f);
    summarize(agg_res[f], row.residual, row.ci_low, row.ci_high);
    summarize(agg_abl[f], row.ablated, row.ablated_ci_low, row.ablated_ci_high);
    out.aggregate.push_back(row);
  }
  return out;
}

void write_residual_csv(const WeakResidualTable& table, const std::vector<TestFunction>& battery, std::ostream& out) {
  out << "time,phi,lhs,rhs,residual,ci_low,ci_high\n";
  out.precision(17);
  for (const auto& r : table.rows)
    out << r.time << ',' << battery.at(r.phi).name() << ',' << r.lhs << ',' << r.rhs << ',' << r.residual << ','
        << r.ci_low << ',' << r.ci_high << '\n';
}

}  // namespace swhf
