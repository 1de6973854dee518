#include <cmath>

#include "doctest.h"
#include "swhf/errors.hpp"
#include "swhf/vlasov.hpp"

using namespace swhf;

namespace {

std::shared_ptr<const BrownianPath> shared(BrownianPath p) { return std::make_shared<const BrownianPath>(std::move(p)); }

ScalarPotential linear() {
  return ScalarPotential::separable([](double x) { return x; }, [](double) { return 1.0; }, [](double) { return 0.0; });
}
ScalarPotential harmonic() {
  return ScalarPotential::separable([](double x) { return 0.5 * x * x; }, [](double x) { return x; },
                                    [](double) { return 1.0; });
}
ScalarPotential cosine() {
  return ScalarPotential::separable([](double x) { return std::cos(2 * M_PI * x); },
                                    [](double x) { return -2 * M_PI * std::sin(2 * M_PI * x); },
                                    [](double x) { return -4 * M_PI * M_PI * std::cos(2 * M_PI * x); });
}

std::vector<double> times(double step, int count) {
  std::vector<double> t;
  for (int k = 0; k <= count; ++k) t.push_back(k * step);
  return t;
}

}  // namespace

TEST_CASE("test function derivatives") {
  const double e = 1e-5;
  for (const auto& phi : default_battery(1.7)) {
    for (double x : {0.1, 0.9, 1.4})
      for (double p : {-1.3, 0.0, 0.4, 2.1}) {
        CHECK(phi.dx(x, p) == doctest::Approx((phi.value(x + e, p) - phi.value(x - e, p)) / (2 * e)).epsilon(1e-7));
        CHECK(phi.dp(x, p) == doctest::Approx((phi.value(x, p + e) - phi.value(x, p - e)) / (2 * e)).epsilon(1e-7));
        CHECK(phi.dpp(x, p) == doctest::Approx((phi.dp(x, p + e) - phi.dp(x, p - e)) / (2 * e)).epsilon(1e-7));
      }
  }
  CHECK(default_battery(1.0).size() == 12);
}

TEST_CASE("evolve_conditional") {
  const auto base = shared(sample_brownian(1, 1.0, 8));
  const WongZakaiMesh mesh(base, 4);
  HamiltonianSpec h;
  h.potential = cosine();
  h.noise_potential = ScalarPotential::separable([](double x) { return std::sin(2 * M_PI * x); },
                                                 [](double x) { return 2 * M_PI * std::cos(2 * M_PI * x); },
                                                 [](double x) { return -4 * M_PI * M_PI * std::sin(2 * M_PI * x); });
  h.eta = 0.4;
  const auto ts = times(1.0 / 32, 32);

  SUBCASE("a single particle is a wz_flow trajectory") {
    const auto e0 = sample_ensemble(1, 1.0, 0.0, 1.0, 3);
    const auto s = evolve_conditional(h, e0, mesh, 4, ts);
    const auto r = wz_flow(h, e0.particles[0], mesh, 4);
    for (std::size_t k = 0; k < ts.size(); ++k) CHECK(s.ensembles[k].particles[0].x[0] == r.x[2 * k][0]);
    CHECK_THROWS_AS(evolve_conditional(h, e0, mesh, 4, {0.01}), DomainError);
  }
  SUBCASE("linear dynamics: ensemble means follow the mean trajectory") {
    HamiltonianSpec lin;
    lin.potential = harmonic();
    lin.noise_potential = linear();
    lin.eta = 1.0;
    const auto e0 = sample_ensemble(200, 1.0, 0.3, 0.8, 4);
    PhaseState mean{Vec::Zero(1), Vec::Zero(1), 0.0};
    for (const auto& s : e0.particles) {
      mean.x += s.x / 200.0;
      mean.p += s.p / 200.0;
    }
    const auto s = evolve_conditional(lin, e0, mesh, 4, ts, 4);
    const auto r = wz_flow(lin, mean, mesh, 4);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      double mx = 0.0, mp = 0.0;
      for (const auto& p : s.ensembles[k].particles) {
        mx += p.x[0] / 200.0;
        mp += p.p[0] / 200.0;
      }
      CHECK(std::abs(mx - r.x[2 * k][0]) <= 1e-10);
      CHECK(std::abs(mp - r.p[2 * k][0]) <= 1e-10);
    }
  }
  SUBCASE("exchangeability") {
    auto e0 = sample_ensemble(20, 1.0, 0.0, 1.0, 5);
    const auto a = weak_residual_first_order(h, evolve_conditional(h, e0, mesh, 4, ts), mesh, default_battery(1.0));
    std::reverse(e0.particles.begin(), e0.particles.end());
    const auto b = weak_residual_first_order(h, evolve_conditional(h, e0, mesh, 4, ts), mesh, default_battery(1.0));
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(std::abs(a.rows[i].residual - b.rows[i].residual) <= 1e-10);
  }
}

TEST_CASE("first-order weak residual") {
  const auto base = shared(sample_brownian(2, 1.0, 9));
  const WongZakaiMesh mesh(base, 3);
  HamiltonianSpec h;
  h.potential = cosine();
  h.noise_potential = linear();
  h.eta = 0.7;
  const auto battery = default_battery(1.0);

  SUBCASE("rest point") {
    HamiltonianSpec rest;
    rest.potential = harmonic();
    PhaseEnsemble e0;
    e0.particles.assign(10, {Vec::Zero(1), Vec::Zero(1), 0.0});
    const auto s = evolve_conditional(rest, e0, mesh, 8, times(1.0 / 64, 64));
    const auto t = weak_residual_first_order(rest, s, mesh, battery);
    for (const auto& r : t.rows) CHECK(std::abs(r.residual) <= 1e-14);
  }
  SUBCASE("residual is time-differencing error: O(dt^2) and independent of N") {
    auto worst = [&](std::size_t n, int count) {
      const auto e0 = sample_ensemble(n, 1.0, 0.0, 0.7, 6);
      const auto s = evolve_conditional(h, e0, mesh, 32, times(1.0 / count, count));
      const auto t = weak_residual_first_order(h, s, mesh, battery);
      double w = 0.0;
      for (const auto& r : t.rows) w = std::max(w, std::abs(r.residual));
      return w;
    };
    const double a = worst(100, 64), b = worst(100, 128), c = worst(400, 128);
    CHECK(a / b == doctest::Approx(4.0).epsilon(0.25));
    CHECK(c / b == doctest::Approx(1.0).epsilon(0.5));
  }
  SUBCASE("windows straddling WZ nodes are skipped") {
    const auto e0 = sample_ensemble(10, 1.0, 0.0, 0.7, 7);
    const auto t = weak_residual_first_order(h, evolve_conditional(h, e0, mesh, 8, times(1.0 / 16, 16)), mesh, battery);
    CHECK(t.skipped_times.size() == 7);
    CHECK_THROWS_AS(
        weak_residual_first_order(h, evolve_conditional(h, e0, mesh, 8, times(1.0 / 16, 1)), mesh, battery),
        InsufficientDataError);
  }
}

TEST_CASE("second-order weak residual") {
  const auto battery = default_battery(1.0);
  SUBCASE("eta = 0 reduces to the Liouville weak form") {
    HamiltonianSpec h;
    h.potential = cosine();
    h.noise_potential = linear();
    SecondOrderOptions opt;
    opt.replications = 4;
    opt.dt_level = 9;
    opt.bootstrap_resamples = 50;
    auto worst = [&](int stride) {
      opt.sample_stride = stride;
      const auto t = weak_residual_second_order(h, sample_ensemble(50, 1.0, 0.0, 0.7, 8), battery, opt);
      double w = 0.0;
      for (const auto& r : t.rows) {
        w = std::max(w, std::abs(r.residual));
        CHECK(r.ci_low == doctest::Approx(r.ci_high));
      }
      return w;
    };
    CHECK(worst(8) / worst(4) == doctest::Approx(4.0).epsilon(0.25));
  }
  SUBCASE("Gaussian-solvable spec against the closed form") {
    HamiltonianSpec h;
    h.noise_potential = linear();
    h.eta = 1.0;
    const auto e0 = sample_ensemble(100, 1.0, 0.0, 0.5, 9);
    SecondOrderOptions opt;
    opt.replications = 60;
    opt.dt_level = 8;
    opt.sample_stride = 32;
    opt.horizon = 0.5;
    opt.workers = 4;
    opt.bootstrap_resamples = 400;
    const std::vector<TestFunction> gauss{{TestFunction::Trig::kOne, 0, 1.0}};
    const auto t = weak_residual_second_order(h, e0, gauss, opt);
    // E exp(-(p0 - B_t)^2) = (1 + 2t)^{-1/2} exp(-p0^2 / (1 + 2t)); derivative in t, averaged over particles
    for (const auto& r : t.rows) {
      double exact = 0.0;
      for (const auto& s : e0.particles) {
        const double p = s.p[0], v = 1 + 2 * r.time;
        exact += std::exp(-p * p / v) * (-1.0 / std::pow(v, 1.5) + 2 * p * p / std::pow(v, 2.5)) / 100.0;
      }
      CHECK(r.rhs == doctest::Approx(exact).epsilon(0.1));
    }
    const auto& agg = t.aggregate.front();
    CHECK(agg.ci_low <= 0.0);
    CHECK(agg.ci_high >= 0.0);
    CHECK((agg.ablated_ci_low > 0.0 || agg.ablated_ci_high < 0.0));
  }
  SUBCASE("configuration errors") {
    HamiltonianSpec h;
    h.noise_metric = InverseMetric::identity();
    SecondOrderOptions opt;
    CHECK_THROWS_AS(weak_residual_second_order(h, sample_ensemble(2, 1.0, 0, 1, 1), battery, opt), ConfigError);
  }
}
