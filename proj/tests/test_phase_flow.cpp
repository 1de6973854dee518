#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "swhf/errors.hpp"
#include "swhf/phase_flow.hpp"

using namespace swhf;

namespace {

std::shared_ptr<const BrownianPath> shared(BrownianPath p) { return std::make_shared<const BrownianPath>(std::move(p)); }

Vec v1(double a) { return Vec::Constant(1, a); }

PhaseState state1(double x, double p) { return {v1(x), v1(p), 0.0}; }

HamiltonianSpec spec_1d(ScalarPotential f, ScalarPotential s, double eta) {
  HamiltonianSpec h;
  h.dim = 1;
  h.potential = std::move(f);
  h.noise_potential = std::move(s);
  h.eta = eta;
  return h;
}

ScalarPotential cos_pot() {
  return ScalarPotential::separable([](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); },
                                    [](double x) { return -std::cos(x); });
}
ScalarPotential sin_pot() {
  return ScalarPotential::separable([](double x) { return std::sin(x); }, [](double x) { return std::cos(x); },
                                    [](double x) { return -std::sin(x); });
}
ScalarPotential linear_pot() {
  return ScalarPotential::separable([](double x) { return x; }, [](double) { return 1.0; }, [](double) { return 0.0; });
}
ScalarPotential harmonic_pot() {
  return ScalarPotential::separable([](double x) { return 0.5 * x * x; }, [](double x) { return x; },
                                    [](double) { return 1.0; });
}

}  // namespace

TEST_CASE("hamiltonian_eval closed forms") {
  SUBCASE("free particle") {
    HamiltonianSpec h = spec_1d(ScalarPotential::zero(), ScalarPotential::zero(), 0.0);
    h.dim = 2;
    const auto e = hamiltonian_eval(h, {Vec::Constant(2, 0.3), (Vec(2) << 1.0, 2.0).finished(), 0.0});
    CHECK(e.h0 == doctest::Approx(2.5));
    CHECK(e.h1 == 0.0);
    CHECK(e.dp_h0[1] == 2.0);
    CHECK(e.dx_h0.norm() == 0.0);
  }
  SUBCASE("d=1, f=cos, sigma=sin at (0,2)") {
    const auto e = hamiltonian_eval(spec_1d(cos_pot(), sin_pot(), 1.0), state1(0.0, 2.0));
    CHECK(e.h0 == doctest::Approx(3.0));
    CHECK(e.h1 == doctest::Approx(0.0));
    CHECK(e.dx_h1[0] == doctest::Approx(1.0));
    CHECK(e.dp_h1[0] == 0.0);
  }
  SUBCASE("non-finite output is reported with the coordinate") {
    auto bad = ScalarPotential::separable([](double x) { return std::log(x); }, [](double x) { return 1.0 / x; }, {});
    CHECK_THROWS_AS(hamiltonian_eval(spec_1d(bad, ScalarPotential::zero(), 0.0), state1(0.0, 1.0)), EvaluationError);
  }
}

TEST_CASE("analytic gradients match central differences") {
  // Position-dependent metric g = diag(2 + sin x_i), noise metric present, coupled potential.
  HamiltonianSpec h;
  h.dim = 2;
  h.metric = InverseMetric::diagonal([](double x) { return 2.0 + std::sin(x); }, [](double x) { return std::cos(x); },
                                     [](double x) { return -std::sin(x); });
  h.noise_metric = InverseMetric::diagonal([](double x) { return 3.0 + std::cos(x); },
                                           [](double x) { return -std::sin(x); }, [](double x) { return -std::cos(x); });
  h.potential.value = [](const Vec& x) { return std::cos(x[0]) * std::sin(2 * x[1]) + 0.1 * x.squaredNorm(); };
  h.potential.gradient = [](const Vec& x, Eigen::Ref<Vec> g) {
    g[0] = -std::sin(x[0]) * std::sin(2 * x[1]) + 0.2 * x[0];
    g[1] = 2 * std::cos(x[0]) * std::cos(2 * x[1]) + 0.2 * x[1];
  };
  h.noise_potential = sin_pot();
  h.eta = 0.7;
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const double step = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    PhaseState s{Vec(2), Vec(2), 0.0};
    s.x << u(rng), u(rng);
    s.p << u(rng), u(rng);
    const auto e = hamiltonian_eval(h, s);
    for (int i = 0; i < 2; ++i) {
      PhaseState a = s, b = s;
      a.x[i] += step;
      b.x[i] -= step;
      const auto ea = hamiltonian_eval(h, a), eb = hamiltonian_eval(h, b);
      CHECK(std::abs((ea.h0 - eb.h0) / (2 * step) - e.dx_h0[i]) <= 1e-6);
      CHECK(std::abs((ea.h1 - eb.h1) / (2 * step) - e.dx_h1[i]) <= 1e-6);
      a = s;
      b = s;
      a.p[i] += step;
      b.p[i] -= step;
      const auto fa = hamiltonian_eval(h, a), fb = hamiltonian_eval(h, b);
      CHECK(std::abs((fa.h0 - fb.h0) / (2 * step) - e.dp_h0[i]) <= 1e-6);
      CHECK(std::abs((fa.h1 - fb.h1) / (2 * step) - e.dp_h1[i]) <= 1e-6);
    }
  }
}

TEST_CASE("full metric built from g agrees with the diagonal factory") {
  auto m = [](double x) { return 2.0 + std::sin(x); };
  auto dm = [](double x) { return std::cos(x); };
  auto d2m = [](double x) { return -std::sin(x); };
  const auto diag = InverseMetric::diagonal(m, dm, d2m);
  const auto full = InverseMetric::from_metric(
      [m](const Vec& x, Eigen::Ref<Mat> g) { g = Mat::Zero(2, 2); g(0, 0) = m(x[0]); g(1, 1) = m(x[1]); },
      [dm](const Vec& x, std::vector<Mat>& d) {
        d.assign(2, Mat::Zero(2, 2));
        d[0](0, 0) = dm(x[0]);
        d[1](1, 1) = dm(x[1]);
      },
      [d2m](const Vec& x, std::vector<Mat>& d) {
        d.assign(4, Mat::Zero(2, 2));
        d[0](0, 0) = d2m(x[0]);
        d[3](1, 1) = d2m(x[1]);
      });
  const Vec x = (Vec(2) << 0.4, -1.1).finished();
  Mat a(2, 2), b(2, 2);
  diag.value(x, a);
  full.value(x, b);
  CHECK((a - b).norm() < 1e-14);
  std::vector<Mat> da, db;
  diag.second_derivative(x, da);
  full.second_derivative(x, db);
  for (std::size_t i = 0; i < 4; ++i) CHECK((da[i] - db[i]).norm() < 1e-13);
  const auto [lo, hi] = metric_eigen_bounds(diag, 2, {x, Vec::Zero(2), Vec::Constant(2, 1.57)});
  CHECK(lo >= 1.0 - 1e-12);
  CHECK(hi <= 3.0 + 1e-12);
}

TEST_CASE("wz_flow with eta=0 reduces to the deterministic oscillator") {
  const double two_pi = 2 * M_PI;
  const auto base = shared(sample_brownian(1, two_pi, 6));
  const WongZakaiMesh mesh(base, 6);
  const auto h = spec_1d(harmonic_pot(), ScalarPotential::zero(), 0.0);
  const auto r = wz_flow(h, state1(1.0, 0.0), mesh, 100);
  CHECK(r.completed());
  CHECK(r.times.back() == doctest::Approx(two_pi));
  CHECK(std::abs(r.x.back()[0] - 1.0) <= 1e-8);
  CHECK(std::abs(r.p.back()[0]) <= 1e-8);
  double drift = 0.0;
  for (double e : r.h0) drift = std::max(drift, std::abs(e - 0.5));
  CHECK(drift <= 1e-9);
}

TEST_CASE("additive noise: p(t) = p0 - eta xi_delta(t)") {
  const auto base = shared(sample_brownian(3, 1.0, 8));
  const WongZakaiMesh mesh(base, 5);
  const double eta = 0.8;
  const auto r = wz_flow(spec_1d(ScalarPotential::zero(), linear_pot(), eta), state1(0.2, 1.5), mesh, 4);
  for (std::size_t i = 0; i < r.times.size(); ++i)
    CHECK(std::abs(r.p[i][0] - (1.5 - eta * wz_eval(mesh, r.times[i]).value)) <= 1e-10);

  SUBCASE("Stratonovich flow is exact at the nodes") {
    const auto s = strat_flow(spec_1d(ScalarPotential::zero(), linear_pot(), eta), state1(0.2, 1.5), *base, 6);
    for (std::size_t i = 0; i < s.times.size(); ++i)
      CHECK(std::abs(s.p[i][0] - (1.5 - eta * base->value(4 * i))) <= 1e-10);
  }
}

TEST_CASE("RK4 inside cells converges at fourth order") {
  const auto base = shared(sample_brownian(12, 1.0, 8));
  const WongZakaiMesh mesh(base, 3);
  const auto h = spec_1d(cos_pot(), sin_pot(), 0.5);
  auto endpoint = [&](int s) {
    const auto r = wz_flow(h, state1(0.3, 0.4), mesh, s);
    return Vec((Vec(2) << r.x.back()[0], r.p.back()[0]).finished());
  };
  const Vec a = endpoint(4), b = endpoint(8), c = endpoint(16);
  const double ratio = (a - b).norm() / (b - c).norm();
  CHECK(ratio > 12.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("strat_flow with eta=0 is deterministic Heun") {
  const auto base = shared(sample_brownian(4, 1.0, 10));
  const auto h = spec_1d(cos_pot(), sin_pot(), 0.0);
  const auto r = strat_flow(h, state1(0.5, -0.2), *base, 10);
  double x = 0.5, p = -0.2;
  const double dt = 1.0 / 1024;
  for (int i = 0; i < 1024; ++i) {
    const double xp = x + p * dt, pp = p + std::sin(x) * dt;
    const double xn = x + 0.5 * (p + pp) * dt;
    const double pn = p + 0.5 * (std::sin(x) + std::sin(xp)) * dt;
    x = xn;
    p = pn;
  }
  CHECK(std::abs(r.x.back()[0] - x) <= 1e-13);
  CHECK(std::abs(r.p.back()[0] - p) <= 1e-13);

  SUBCASE("and agrees with wz_flow to integrator tolerance") {
    const auto w = wz_flow(h, state1(0.5, -0.2), WongZakaiMesh(base, 4), 64);
    CHECK(std::abs(w.x.back()[0] - x) <= 1e-5);
    CHECK(std::abs(w.p.back()[0] - p) <= 1e-5);
  }
}

TEST_CASE("Poisson-commuting H1 = eta H0 is conserved by the AVF scheme") {
  auto h = spec_1d(cos_pot(), cos_pot(), 0.6);
  h.noise_metric = InverseMetric::identity();
  const auto base = shared(sample_brownian(31, 1.0, 10));
  FlowOptions opt;
  opt.scheme = StratScheme::kAvf;
  // dt = 2^-10 ~ 1e-3
  const auto r = strat_flow(h, state1(0.5, 1.0), *base, 10, opt);
  CHECK(r.completed());
  double d0 = 0.0, d1 = 0.0;
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    d0 = std::max(d0, std::abs(r.h0[i] / r.h0[0] - 1.0));
    d1 = std::max(d1, std::abs(r.h1[i] / r.h1[0] - 1.0));
  }
  CHECK(d0 <= 1e-6);
  CHECK(d1 <= 1e-6);

  SUBCASE("AVF and Heun approach each other under refinement") {
    auto gap = [&](int level) {
      FlowOptions heun;
      const auto a = strat_flow(h, state1(0.5, 1.0), *base, level, heun);
      const auto b = strat_flow(h, state1(0.5, 1.0), *base, level, opt);
      return std::abs(a.x.back()[0] - b.x.back()[0]) + std::abs(a.p.back()[0] - b.p.back()[0]);
    };
    CHECK(gap(10) < gap(6));
  }
}

TEST_CASE("variational flow of a linear system is the fundamental matrix") {
  Mat k = Mat::Zero(2, 2);
  k(0, 0) = 1.0;
  k(1, 1) = 4.0;
  HamiltonianSpec h;
  h.dim = 2;
  h.potential = ScalarPotential::quadratic(k, Vec::Zero(2));
  h.noise_potential = ScalarPotential::quadratic(Mat::Zero(2, 2), (Vec(2) << 1.0, -0.5).finished());
  h.eta = 1.0;
  const auto base = shared(sample_brownian(5, 1.0, 8));
  const FlowDriver drv = WzDriver{WongZakaiMesh(base, 5), 16};
  const auto r1 = variational_flow(h, {Vec::Zero(2), Vec::Zero(2), 0}, drv);
  const auto r2 = variational_flow(h, {Vec::Constant(2, 2.0), Vec::Constant(2, -1.0), 0}, drv);
  CHECK((r1.jacobian[0] - Mat::Identity(4, 4)).norm() == 0.0);
  for (std::size_t i = 0; i < r1.times.size(); i += 7) {
    const double t = r1.times[i];
    Mat e = Mat::Zero(4, 4);
    for (int c = 0; c < 2; ++c) {
      const double w = std::sqrt(k(c, c));
      e(c, c) = std::cos(w * t);
      e(c, 2 + c) = std::sin(w * t) / w;
      e(2 + c, c) = -w * std::sin(w * t);
      e(2 + c, 2 + c) = std::cos(w * t);
    }
    CHECK((r1.jacobian[i] - e).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((r1.jacobian[i] - r2.jacobian[i]).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("Liouville: det J = 1 for eta = 0") {
  const auto base = shared(sample_brownian(6, 2.0, 8));
  const auto h = spec_1d(cos_pot(), sin_pot(), 0.0);
  const auto r = variational_flow(h, state1(0.1, 1.3), WzDriver{WongZakaiMesh(base, 6), 16});
  for (const Mat& j : r.jacobian) CHECK(std::abs(j.determinant() - 1.0) <= 1e-6);
}

TEST_CASE("variational Jacobian matches coupled finite differences") {
  const auto base = shared(sample_brownian(7, 1.0, 9));
  const auto h = spec_1d(cos_pot(), sin_pot(), 1.0);
  const double bump = 1e-6;
  for (const FlowDriver& drv :
       {FlowDriver{WzDriver{WongZakaiMesh(base, 5), 16}}, FlowDriver{StratDriver{base, 9}}}) {
    const auto r = variational_flow(h, state1(0.4, 0.7), drv);
    const auto a = run_flow(h, state1(0.4 + bump, 0.7), drv);
    const auto b = run_flow(h, state1(0.4 - bump, 0.7), drv);
    const auto c = run_flow(h, state1(0.4, 0.7 + bump), drv);
    const auto d = run_flow(h, state1(0.4, 0.7 - bump), drv);
    const std::size_t e = r.times.size() - 1;
    CHECK(std::abs((a.x[e][0] - b.x[e][0]) / (2 * bump) - r.jxx(e)(0, 0)) <= 1e-4);
    CHECK(std::abs((a.p[e][0] - b.p[e][0]) / (2 * bump) - r.jpx(e)(0, 0)) <= 1e-4);
    CHECK(std::abs((c.x[e][0] - d.x[e][0]) / (2 * bump) - r.jxp(e)(0, 0)) <= 1e-4);
    CHECK(std::abs((c.p[e][0] - d.p[e][0]) / (2 * bump) - r.jpp(e)(0, 0)) <= 1e-4);
  }

  SUBCASE("AVF Jacobian as well") {
    FlowOptions opt;
    opt.scheme = StratScheme::kAvf;
    const FlowDriver drv = StratDriver{base, 8};
    const auto r = variational_flow(h, state1(0.4, 0.7), drv, opt);
    const auto a = run_flow(h, state1(0.4 + bump, 0.7), drv, opt);
    const auto b = run_flow(h, state1(0.4 - bump, 0.7), drv, opt);
    const std::size_t e = r.times.size() - 1;
    CHECK(std::abs((a.x[e][0] - b.x[e][0]) / (2 * bump) - r.jxx(e)(0, 0)) <= 1e-4);
  }
  SUBCASE("missing Hessians are rejected") {
    auto no_hess = h;
    no_hess.potential.hessian = nullptr;
    CHECK_THROWS_AS(variational_flow(no_hess, state1(0.0, 0.0), StratDriver{base, 4}), ConfigError);
  }
}

TEST_CASE("Jacobian chain rule across a restart") {
  const int level = 8;
  const auto base = shared(sample_brownian(14, 1.0, level));
  // tail path: B(1/2 + s) - B(1/2), s in [0, 1/2]
  const std::size_t half = base->nodes() / 2;
  std::vector<double> tail(half + 1);
  for (std::size_t j = 0; j <= half; ++j) tail[j] = base->value(half + j) - base->value(half);
  const auto tail_path = shared(BrownianPath(0.5, level - 1, 1, 0, tail));
  const auto h = spec_1d(cos_pot(), sin_pot(), 0.8);
  FlowOptions head_opt;
  head_opt.end_time = 0.5;
  const auto full = variational_flow(h, state1(0.2, 0.3), WzDriver{WongZakaiMesh(base, 5), 8});
  const auto head = variational_flow(h, state1(0.2, 0.3), WzDriver{WongZakaiMesh(base, 5), 8}, head_opt);
  PhaseState mid{head.x.back(), head.p.back(), 0.0};
  const auto second = variational_flow(h, mid, WzDriver{WongZakaiMesh(tail_path, 4), 8});
  const Mat chained = second.jacobian.back() * head.jacobian.back();
  CHECK((chained - full.jacobian.back()).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("mirror symmetry on the torus") {
  const double L = 2 * M_PI;
  const auto base = shared(sample_brownian(15, 1.0, 8));
  const auto mirrored = shared(base->scaled(-1.0));
  auto wrap = [L](double x) { return x - L * std::floor(x / L); };
  SUBCASE("even f and even sigma with the same noise") {
    auto h = spec_1d(cos_pot(), cos_pot(), 0.9);
    h.domain = Domain::flat_torus(Vec::Constant(1, L));
    const auto a = wz_flow(h, state1(0.7, 0.4), WongZakaiMesh(base, 5), 8);
    const auto b = wz_flow(h, state1(-0.7, -0.4), WongZakaiMesh(base, 5), 8);
    for (std::size_t i = 0; i < a.times.size(); ++i) {
      CHECK(std::abs(wrap(a.x[i][0] + b.x[i][0]) - 0.0) * std::abs(wrap(a.x[i][0] + b.x[i][0]) - L) <= 1e-24 + 0.0 * L);
      CHECK(a.p[i][0] == -b.p[i][0]);
    }
  }
  SUBCASE("even f and odd sigma with mirrored noise") {
    auto h = spec_1d(cos_pot(), sin_pot(), 0.9);
    const auto a = wz_flow(h, state1(0.7, 0.4), WongZakaiMesh(base, 5), 8);
    const auto b = wz_flow(h, state1(-0.7, -0.4), WongZakaiMesh(mirrored, 5), 8);
    for (std::size_t i = 0; i < a.times.size(); ++i) {
      CHECK(a.x[i][0] == -b.x[i][0]);
      CHECK(a.p[i][0] == -b.p[i][0]);
    }
  }
}

TEST_CASE("diffeomorphism loss detection") {
  const auto base = shared(sample_brownian(16, 6.0, 10));
  SUBCASE("free particle keeps det 1") {
    const auto r = variational_flow(spec_1d(ScalarPotential::zero(), ScalarPotential::zero(), 0.0), state1(0.0, 1.0),
                                    StratDriver{base, 9});
    CHECK_FALSE(diffeo_loss_time(r, 0.999).has_value());
  }
  SUBCASE("pendulum focusing: detection time decreases as the threshold rises") {
    auto neg_cos = ScalarPotential::separable([](double x) { return -std::cos(x); },
                                              [](double x) { return std::sin(x); },
                                              [](double x) { return std::cos(x); });
    const auto r = variational_flow(spec_1d(neg_cos, ScalarPotential::zero(), 0.0), state1(0.2, 0.0),
                                    WzDriver{WongZakaiMesh(base, 6), 16});
    double previous = 1e9;
    for (double thr : {-0.5, 0.0, 1e-3, 0.3, 0.6, 0.9}) {
      const auto t = diffeo_loss_time(r, thr);
      REQUIRE(t.has_value());
      CHECK(*t <= previous);
      previous = *t;
    }
    FlowOptions opt;
    opt.end_time = 1.0;
    const auto short_run = variational_flow(spec_1d(neg_cos, ScalarPotential::zero(), 0.0), state1(0.2, 0.0),
                                            WzDriver{WongZakaiMesh(base, 6), 16}, opt);
    CHECK_FALSE(diffeo_loss_time(short_run, 0.0).has_value());
  }
  SUBCASE("missing Jacobians") {
    const auto r = run_flow(spec_1d(ScalarPotential::zero(), ScalarPotential::zero(), 0.0), state1(0.0, 1.0),
                            StratDriver{base, 4});
    CHECK_THROWS_AS(diffeo_loss_time(r, 0.5), ConfigError);
  }
}

TEST_CASE("growth diagnostic") {
  std::vector<PhaseState> grid;
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 100; ++j) grid.push_back(state1(-10.0 + 20.0 * i / 99, -10.0 + 20.0 * j / 99));
  SUBCASE("no noise potential") {
    const auto r = growth_diagnostic(spec_1d(cos_pot(), ScalarPotential::zero(), 1.0), grid, 1.0, 1.0);
    CHECK(r.max_ratio == 0.0);
  }
  SUBCASE("f=cos, sigma=sin brute force") {
    const double eta = 1.0, C1 = 2.0, c1 = 1.0;
    const auto r = growth_diagnostic(spec_1d(cos_pot(), sin_pot(), eta), grid, C1, c1);
    double best = 0.0;
    for (const auto& s : grid) {
      const double x = s.x[0], p = s.p[0];
      const double lhs = eta * eta * std::cos(x) * std::cos(x) + eta * std::abs(p * std::cos(x)) +
                         eta * std::abs(std::cos(x) * std::sin(x)) + eta * std::abs(p * p * std::sin(x));
      best = std::max(best, lhs / (C1 + c1 * (0.5 * p * p + std::cos(x))));
    }
    CHECK(std::isfinite(r.max_ratio));
    CHECK(r.max_ratio == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.lhs.size() == grid.size());
  }
}

TEST_CASE("energy expansion along WZ trajectories") {
  const auto base = shared(sample_brownian(17, 1.0, 8));
  const WongZakaiMesh mesh(base, 4);
  SUBCASE("eta = 0: residual is the energy drift") {
    const auto h = spec_1d(cos_pot(), sin_pot(), 0.0);
    const auto r = wz_flow(h, state1(0.3, 1.0), mesh, 32);
    CHECK(energy_expansion_check(h, r, mesh).sup_residual <= 1e-9);
  }
  SUBCASE("linear closed form holds to round-off") {
    const auto h = spec_1d(ScalarPotential::zero(), linear_pot(), 0.7);
    const auto r = wz_flow(h, state1(0.3, 1.0), mesh, 4);
    CHECK(energy_expansion_check(h, r, mesh).sup_residual <= 1e-10);
  }
  SUBCASE("residual shrinks at fourth order") {
    const auto h = spec_1d(cos_pot(), sin_pot(), 1.0);
    const double a = energy_expansion_check(h, wz_flow(h, state1(0.3, 1.0), mesh, 4), mesh).sup_residual;
    const double b = energy_expansion_check(h, wz_flow(h, state1(0.3, 1.0), mesh, 8), mesh).sup_residual;
    CHECK(a / b > 10.0);
  }
}

TEST_CASE("blow-up returns a partial trajectory") {
  auto quartic = ScalarPotential::separable([](double x) { return -x * x * x * x; },
                                            [](double x) { return -4 * x * x * x; },
                                            [](double x) { return -12 * x * x; });
  const auto base = shared(sample_brownian(18, 10.0, 8));
  const auto r = wz_flow(spec_1d(quartic, ScalarPotential::zero(), 0.0), state1(1.0, 1.0), WongZakaiMesh(base, 8), 4);
  CHECK(r.status.kind == FlowStatusKind::kNonFinite);
  CHECK(r.status.time < 10.0);
  CHECK(r.times.size() > 1);
}

TEST_CASE("trajectory export") {
  const auto base = shared(sample_brownian(19, 1.0, 6));
  const auto h = spec_1d(cos_pot(), sin_pot(), 1.0);
  const auto r = wz_flow(h, state1(0.1, 0.2), WongZakaiMesh(base, 3), 2);
  std::stringstream bin;
  write_trajectory_binary(r, bin);
  const auto back = read_trajectory_binary(bin);
  CHECK(back.times == r.times);
  CHECK(back.h0 == r.h0);
  CHECK(back.x.back()[0] == r.x.back()[0]);
  std::stringstream csv;
  write_trajectory_csv(r, csv);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "t,x0,p0,H0,H1");
}
