#include <cmath>
#include <sstream>

#include "doctest.h"
#include "swhf/errors.hpp"
#include "swhf/snls.hpp"

using namespace swhf;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

std::shared_ptr<const BrownianPath> shared(BrownianPath p) { return std::make_shared<const BrownianPath>(std::move(p)); }

GridSpec grid(int n, double period = 1.0) {
  GridSpec g;
  g.n = n;
  g.period = period;
  return g;
}

SpatialMode constant_mode(double c) {
  return {[c](double) { return c; }, [](double) { return 0.0; }};
}
SpatialMode cos_mode(double c, double period, double shift = 0.0) {
  return {[=](double x) { return c * std::cos(kTwoPi * (x - shift) / period); },
          [=](double x) { return -c * kTwoPi / period * std::sin(kTwoPi * (x - shift) / period); }};
}
SpatialMode sin_mode(double c, double period, double shift = 0.0) {
  return {[=](double x) { return c * std::sin(kTwoPi * (x - shift) / period); },
          [=](double x) { return c * kTwoPi / period * std::cos(kTwoPi * (x - shift) / period); }};
}

NlsSpec two_mode_spec(std::shared_ptr<const BrownianPath> path, int delta_level, double shift = 0.0) {
  NlsSpec s;
  s.grid = grid(128);
  s.lambda = 1.0;
  s.driver = NlsDriver::kWzPotential;
  s.field.modes = {cos_mode(0.5, 1.0, shift), sin_mode(0.3, 1.0, shift)};
  s.field.paths = std::move(path);
  s.delta_level = delta_level;
  return s;
}

cplx smooth_u0(double x) { return cplx(1.0 + 0.3 * std::cos(kTwoPi * x), 0.2 * std::sin(2 * kTwoPi * x)); }

/// Naive DFT propagation: u(T) = sum_m u0_hat(m) e^{-i k_m^2 tau} e^{i k_m x}.
std::vector<cplx> free_propagate(const std::vector<cplx>& u0, double period, double tau) {
  const int n = static_cast<int>(u0.size());
  std::vector<cplx> out(n);
  for (int m = -n / 2; m < n / 2; ++m) {
    cplx c = 0.0;
    for (int j = 0; j < n; ++j) c += u0[j] * std::polar(1.0, -kTwoPi * m * j / n);
    c /= static_cast<double>(n);
    const double k = kTwoPi * m / period;
    for (int j = 0; j < n; ++j) out[j] += c * std::polar(1.0, -k * k * tau + kTwoPi * m * j / n);
  }
  return out;
}

double max_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("nls step closed forms") {
  SUBCASE("constant mode on constant data") {
    const auto path = shared(sample_brownian(3, 1.0, 8));
    NlsSpec s;
    s.grid = grid(32);
    s.lambda = 0.7;
    s.driver = NlsDriver::kWzPotential;
    s.field.modes = {constant_mode(1.3)};
    s.field.paths = path;
    s.delta_level = 4;
    const double A = 0.8;
    const auto series = nls_evolve(s, wave_from(s.grid, [&](double) { return cplx(A); }), 1.0, 1.0 / 64, 4);
    const WongZakaiMesh mesh(path, 4);
    for (std::size_t k = 0; k < series.times.size(); ++k) {
      const double t = series.times[k];
      const cplx exact = A * std::polar(1.0, 1.3 * wz_eval(mesh, t).value + 0.7 * A * A * t);
      for (const auto& v : series.waves[k].values) CHECK(std::abs(v - exact) <= 1e-12);
    }
  }
  SUBCASE("deterministic cubic plane wave") {
    NlsSpec s;
    s.grid = grid(64);
    s.lambda = 1.0;
    const double A = 0.5, k = 2 * kTwoPi;
    const auto series = nls_evolve(s, wave_from(s.grid, [&](double x) { return A * std::polar(1.0, k * x); }), 1.0,
                                   1e-3, 1000);
    const double w = s.lambda * A * A - k * k;
    const auto exact = wave_from(s.grid, [&](double x) { return A * std::polar(1.0, k * x + w); });
    CHECK(max_diff(series.waves.back().values, exact.values) <= 1e-8);
  }
  SUBCASE("free Gaussian packet is exact in time") {
    NlsSpec s;
    s.grid = grid(128, 10.0);
    s.lambda = 0.0;
    const auto u0 = wave_from(s.grid, [](double x) { return std::exp(-(x - 5) * (x - 5)) * std::polar(1.0, 2 * x); });
    const auto series = nls_evolve(s, u0, 1.0, 0.01, 100);
    CHECK(max_diff(series.waves.back().values, free_propagate(u0.values, 10.0, 1.0)) <= 1e-10);
  }
  SUBCASE("white and random dispersion with lambda = 0") {
    const auto u0 = wave_from(grid(64), smooth_u0);
    NlsSpec s;
    s.grid = grid(64);
    s.lambda = 0.0;
    s.driver = NlsDriver::kWhiteDispersion;
    s.dispersion_path = shared(sample_brownian(5, 1.0, 6));
    const auto w = nls_evolve(s, u0, 1.0, 1.0 / 64, 64);
    CHECK(max_diff(w.waves.back().values, free_propagate(u0.values, 1.0, s.dispersion_path->value(64))) <= 1e-10);

    s.driver = NlsDriver::kRandomDispersion;
    s.dispersion = std::make_shared<const DispersionDriver>(1.0, 1.0, 0.2, 1.0, 0.01, 6);
    const auto r = nls_evolve(s, u0, 1.0, 1.0 / 50, 50);
    CHECK(max_diff(r.waves.back().values, free_propagate(u0.values, 1.0, dispersion_integral(*s.dispersion, 0, 1))) <=
          1e-10);
  }
  SUBCASE("steps may not straddle a WZ node") {
    const auto s = two_mode_spec(shared(sample_brownian(1, 1.0, 6, 2)), 3);
    const auto u0 = wave_from(s.grid, smooth_u0);
    CHECK_THROWS_AS(nls_step(s, u0, 0.1, 0.05), ConfigError);
    CHECK_NOTHROW(nls_step(s, u0, 0.0, 0.125));
  }
}

TEST_CASE("nls conservation and symmetry") {
  const auto path = shared(sample_brownian(11, 1.0, 10, 2));
  SUBCASE("mass is invariant for every driver") {
    auto s = two_mode_spec(path, 6);
    const auto u0 = wave_from(s.grid, smooth_u0);
    const double m0 = u0.mass();
    for (auto kind : {NlsDriver::kWzPotential, NlsDriver::kStratPotential, NlsDriver::kWhiteDispersion,
                      NlsDriver::kRandomDispersion, NlsDriver::kNone}) {
      s.driver = kind;
      s.dispersion_path = path;
      s.dispersion = std::make_shared<const DispersionDriver>(1.0, 1.0, 0.3, 1.0, 0.01, 7);
      const auto one = nls_step(s, u0, 0.0, 1.0 / 1024);
      CHECK(std::abs(one.mass() - m0) / m0 <= 1e-13);
      const auto run = nls_evolve(s, u0, 1.0, 1.0 / 1024, 1024);
      CHECK(std::abs(run.mass.back() - m0) / m0 <= 1e-11);
    }
  }
  SUBCASE("gauge covariance") {
    const auto s = two_mode_spec(path, 5);
    const auto u0 = wave_from(s.grid, smooth_u0);
    auto v0 = u0;
    const cplx g = std::polar(1.0, 0.9);
    for (auto& v : v0.values) v *= g;
    const auto a = nls_evolve(s, u0, 0.5, 1.0 / 256, 128).waves.back().values;
    auto b = nls_evolve(s, v0, 0.5, 1.0 / 256, 128).waves.back().values;
    for (auto& v : b) v /= g;
    CHECK(max_diff(a, b) <= 1e-13);
  }
  SUBCASE("translation equivariance") {
    const auto s = two_mode_spec(path, 5);
    const double h = s.grid.spacing();
    const auto shifted = two_mode_spec(path, 5, h);
    const auto u0 = wave_from(s.grid, smooth_u0);
    const auto v0 = wave_from(s.grid, [&](double x) { return smooth_u0(x - h); });
    const auto a = nls_evolve(s, u0, 0.5, 1.0 / 256, 128).waves.back().values;
    const auto b = nls_evolve(shifted, v0, 0.5, 1.0 / 256, 128).waves.back().values;
    const std::size_t n = a.size();
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) d = std::max(d, std::abs(b[(i + 1) % n] - a[i]));
    CHECK(d <= 1e-12);
  }
  SUBCASE("Strang splitting is second order in dt") {
    auto s = two_mode_spec(path, 3);
    const auto u0 = wave_from(s.grid, smooth_u0);
    auto end = [&](double dt) { return nls_evolve(s, u0, 1.0, dt, 1 << 20).waves.back().values; };
    const auto ref = end(1.0 / 1024);
    const double e1 = max_diff(end(1.0 / 64), ref), e2 = max_diff(end(1.0 / 128), ref);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.15));
  }
}

TEST_CASE("nls energy") {
  NlsSpec s;
  s.grid = grid(64, 2.0);
  s.lambda = 1.5;
  const double A = 0.7, k = kTwoPi / 2.0 * 3;
  CHECK(nls_energy(s, wave_from(s.grid, [&](double) { return cplx(A); })) ==
        doctest::Approx(-0.25 * s.lambda * std::pow(A, 4) * 2.0));
  CHECK(nls_energy(s, wave_from(s.grid, [&](double x) { return A * std::polar(1.0, k * x); })) ==
        doctest::Approx(0.5 * k * k * A * A * 2.0 - 0.25 * s.lambda * std::pow(A, 4) * 2.0));

  s.grid = grid(128);
  const auto u0 = wave_from(s.grid, smooth_u0);
  auto drift = [&](double dt) {
    const auto r = nls_evolve(s, u0, 1.0, dt, 1);
    double d = 0.0;
    for (double e : r.energy) d = std::max(d, std::abs(e - r.energy.front()));
    return d;
  };
  const double d1 = drift(1.0 / 128), d2 = drift(1.0 / 256);
  CHECK(d1 <= 1e-2);
  CHECK(d1 / d2 == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("madelung transform") {
  const auto g = grid(64);
  SUBCASE("real positive field") {
    const auto m = madelung(wave_from(g, [](double x) { return cplx(1.2 + std::sin(kTwoPi * x)); }));
    for (double s : m.phase) CHECK(s == 0.0);
    CHECK(m.winding == 0);
    CHECK(m.components.size() == 1);
  }
  SUBCASE("pure phase winds") {
    const auto u = wave_from(g, [](double x) { return std::polar(1.0, 3 * kTwoPi * x); });
    const auto m = madelung(u);
    CHECK(m.winding == 3);
    const std::size_t a = m.components[0].anchor;
    for (std::size_t s = 1; s < 64; ++s) {
      const std::size_t i = (a + s) % 64, j = (a + s - 1) % 64;
      CHECK(m.phase[i] - m.phase[j] == doctest::Approx(3 * kTwoPi / 64).epsilon(1e-12));
    }
  }
  SUBCASE("round trip and disconnected support") {
    const auto u = wave_from(g, [](double x) { return std::sin(kTwoPi * x) * std::polar(1.0, 5 * std::cos(kTwoPi * x)); });
    const auto m = madelung(u, 1e-3);
    CHECK(m.components.size() == 2);
    CHECK(m.winding == 0);
    for (std::size_t i = 0; i < 64; ++i) {
      if (!m.mask[i]) continue;
      CHECK(std::abs(std::sqrt(m.rho[i]) * std::polar(1.0, m.phase[i]) - u.values[i]) <= 1e-12);
      const std::size_t j = (i + 1) % 64;
      if (m.mask[j]) CHECK(std::abs(m.phase[j] - m.phase[i]) < M_PI);
    }
    CHECK(m.raw_mass == doctest::Approx(0.5));
  }
}

TEST_CASE("madelung residual") {
  SUBCASE("constant data with a constant mode") {
    NlsSpec s;
    s.grid = grid(32);
    s.lambda = 0.6;
    s.driver = NlsDriver::kWzPotential;
    s.field.modes = {constant_mode(0.8)};
    s.field.paths = shared(sample_brownian(4, 1.0, 8));
    s.delta_level = 3;
    const auto r = nls_evolve(s, wave_from(s.grid, [](double) { return cplx(0.9); }), 1.0, 1.0 / 64, 1);
    const auto res = madelung_residual(s, r.waves, 0.0, 1.0 / 64);
    CHECK(res.sup_continuity <= 1e-10);
    CHECK(res.sup_phase <= 1e-10);
    CHECK(res.skipped.size() == 7);
  }
  SUBCASE("refinement of a smooth noisy run") {
    const auto path = shared(sample_brownian(8, 1.0, 10, 2));
    auto sup = [&](int n, double dt) {
      auto s = two_mode_spec(path, 2);
      s.grid = grid(n);
      const auto r = nls_evolve(s, wave_from(s.grid, smooth_u0), 0.125, dt, 1);
      return madelung_residual(s, r.waves, 0.0, dt);
    };
    const auto a = sup(32, 1.0 / 2048), b = sup(64, 1.0 / 4096);
    CHECK(a.sup_continuity / b.sup_continuity >= 2.0);
    CHECK(a.sup_phase / b.sup_phase >= 2.0);
    CHECK(b.sup_phase <= 0.1);
  }
  SUBCASE("errors") {
    NlsSpec s;
    s.grid = grid(32);
    std::vector<WaveField> w(3, wave_from(s.grid, [](double x) { return cplx(std::sin(kTwoPi * x) > 0.5 ? 1.0 : 0.0); }));
    CHECK_THROWS_AS(madelung_residual(s, w, 0.0, 0.1), SupportError);
    w.pop_back();
    CHECK_THROWS_AS(madelung_residual(s, w, 0.0, 0.1), InsufficientDataError);
  }
}

TEST_CASE("nls Wong-Zakai convergence study") {
  const auto u0 = wave_from(grid(64), smooth_u0);
  NlsStudyOptions o;
  o.delta_levels = {3, 4, 5, 6};
  o.replications = 12;
  o.workers = 4;
  o.bootstrap_resamples = 200;
  SUBCASE("noise-free study is flagged degenerate") {
    NlsSpec s;
    s.grid = grid(64);
    s.lambda = 1.0;
    const auto r = nls_convergence_study(s, u0, o);
    CHECK(r.degenerate);
    CHECK_FALSE(r.fit.has_value());
  }
  SUBCASE("two smooth modes") {
    auto s = two_mode_spec(nullptr, 0);
    s.grid = grid(64);
    const auto r = nls_convergence_study(s, u0, o);
    REQUIRE(r.fit.has_value());
    CHECK(r.strictly_decreasing());
    CHECK(r.fit->slope >= 0.35);
    CHECK(r.monotone_fraction() >= 0.5);
    o.workers = 1;
    const auto serial = nls_convergence_study(s, u0, o);
    CHECK(serial.per_path == r.per_path);
    MESSAGE("nls WZ slope " << r.fit->slope << " +- " << r.fit->stderr_slope);
  }
  SUBCASE("too few levels") {
    auto s = two_mode_spec(nullptr, 0);
    s.grid = grid(64);
    o.delta_levels = {3, 4};
    CHECK_THROWS_AS(nls_convergence_study(s, u0, o), InsufficientDataError);
  }
}

TEST_CASE("wave IO") {
  const auto u = wave_from(grid(16, 3.0), smooth_u0);
  std::stringstream bin;
  write_wave_binary(u, bin);
  const auto back = read_wave_binary(bin);
  CHECK(back.values == u.values);
  CHECK(back.grid == u.grid);
  std::ostringstream csv;
  write_wave_csv(u, csv);
  CHECK(csv.str().rfind("x,re,im,rho,S\n", 0) == 0);
  std::stringstream bad("SWHFPATHxxxxxxxx");
  CHECK_THROWS_AS(read_wave_binary(bad), IoError);
}
