#include "swhf/grid.hpp"

#include <fftw3.h>

#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <ostream>

#include "swhf/errors.hpp"

namespace swhf {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

void GridSpec::validate() const {
  if (dim != 1 && dim != 2) throw ConfigError("grid dimension must be 1 or 2");
  if (n < 8 || (n & (n - 1)) != 0) throw ConfigError("grid points per axis must be a power of two >= 8");
  if (!(period > 0.0) || !std::isfinite(period)) throw ConfigError("grid period must be positive");
  if (!std::isfinite(origin)) throw ConfigError("grid origin must be finite");
}

double GridSpec::coordinate(std::size_t flat, int axis) const {
  const std::size_t i = dim == 1 ? flat : (axis == 0 ? flat / n : flat % n);
  return origin + spacing() * static_cast<double>(i);
}

std::vector<double> GridSpec::axis_nodes() const {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = origin + spacing() * i;
  return x;
}

double sum_times_volume(const GridSpec& grid, std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) * grid.cell_volume();
}

double sup_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double DensityField::mass() const { return sum_times_volume(grid, values); }

double DensityField::normalize() {
  const double m = mass();
  if (!(m > 0.0) || !std::isfinite(m)) throw SupportError("density has no positive finite mass");
  for (double& v : values) v /= m;
  return 1.0 / m;
}

double PotentialField::mean() const { return std::accumulate(values.begin(), values.end(), 0.0) / values.size(); }

double PotentialField::project_zero_mean() {
  const double m = mean();
  for (double& v : values) v -= m;
  return m;
}

DensityField density_from(const GridSpec& grid, const std::function<double(double)>& f) {
  grid.validate();
  DensityField d{grid, std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = f(grid.coordinate(i, 0));
  d.normalize();
  return d;
}

void write_field_csv(const GridSpec& grid, std::span<const double> values, std::ostream& out) {
  out << (grid.dim == 1 ? "x,value\n" : "x,y,value\n");
  out.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << grid.coordinate(i, 0) << ',';
    if (grid.dim == 2) out << grid.coordinate(i, 1) << ',';
    out << values[i] << '\n';
  }
}

struct Spectral::Plans {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
  }
};

Spectral::Spectral(const GridSpec& grid) : grid_(grid) {
  grid_.validate();
  const std::size_t total = grid_.size();
  auto plans = std::make_shared<Plans>();
  {
    std::lock_guard lock(planner_mutex());
    std::vector<cplx> a(total), b(total);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    if (grid_.dim == 1) {
      plans->fwd = fftw_plan_dft_1d(grid_.n, as_fftw(a.data()), as_fftw(b.data()), FFTW_FORWARD, flags);
      plans->bwd = fftw_plan_dft_1d(grid_.n, as_fftw(a.data()), as_fftw(b.data()), FFTW_BACKWARD, flags);
    } else {
      plans->fwd = fftw_plan_dft_2d(grid_.n, grid_.n, as_fftw(a.data()), as_fftw(b.data()), FFTW_FORWARD, flags);
      plans->bwd = fftw_plan_dft_2d(grid_.n, grid_.n, as_fftw(a.data()), as_fftw(b.data()), FFTW_BACKWARD, flags);
    }
  }
  if (!plans->fwd || !plans->bwd) throw ConfigError("FFTW plan creation failed");
  plans_ = plans;

  const int n = grid_.n;
  k2_.assign(total, 0.0);
  keep_.assign(total, 1);
  for (int a = 0; a < grid_.dim; ++a) k_axis_[a].assign(total, 0.0);
  for (std::size_t f = 0; f < total; ++f) {
    const int idx[2] = {grid_.dim == 1 ? int(f) : int(f / n), grid_.dim == 1 ? 0 : int(f % n)};
    for (int a = 0; a < grid_.dim; ++a) {
      const double k = wavenumber(idx[a]);
      k2_[f] += k * k;
      k_axis_[a][f] = (idx[a] == n / 2) ? 0.0 : k;
      const int m = idx[a] <= n / 2 ? idx[a] : idx[a] - n;
      if (3 * std::abs(m) > n) keep_[f] = 0;
    }
  }
}

double Spectral::wavenumber(int index) const {
  const int n = grid_.n;
  const int m = index < n / 2 ? index : index - n;
  return 2.0 * M_PI * m / grid_.period;
}

std::vector<cplx> Spectral::forward(std::span<const cplx> u) const {
  std::vector<cplx> in(u.begin(), u.end()), out(u.size());
  fftw_execute_dft(plans_->fwd, as_fftw(in.data()), as_fftw(out.data()));
  return out;
}

std::vector<cplx> Spectral::backward(std::span<const cplx> u_hat) const {
  std::vector<cplx> in(u_hat.begin(), u_hat.end()), out(u_hat.size());
  fftw_execute_dft(plans_->bwd, as_fftw(in.data()), as_fftw(out.data()));
  const double scale = 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= scale;
  return out;
}

namespace {

std::vector<cplx> to_complex(std::span<const double> f) { return {f.begin(), f.end()}; }

std::vector<double> real_part(const std::vector<cplx>& u) {
  std::vector<double> r(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) r[i] = u[i].real();
  return r;
}

}  // namespace

std::vector<cplx> Spectral::derivative(std::span<const cplx> f, int axis) const {
  auto h = forward(f);
  const auto& k = k_axis_[axis];
  for (std::size_t i = 0; i < h.size(); ++i) h[i] *= cplx(0.0, k[i]);
  return backward(h);
}

std::vector<double> Spectral::derivative(std::span<const double> f, int axis) const {
  return real_part(derivative(std::span<const cplx>(to_complex(f)), axis));
}

std::vector<cplx> Spectral::laplacian(std::span<const cplx> f) const {
  auto h = forward(f);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] *= -k2_[i];
  return backward(h);
}

std::vector<double> Spectral::laplacian(std::span<const double> f) const {
  return real_part(laplacian(std::span<const cplx>(to_complex(f))));
}

std::vector<double> Spectral::dealias(std::span<const double> f) const {
  auto h = forward(to_complex(f));
  for (std::size_t i = 0; i < h.size(); ++i)
    if (!keep_[i]) h[i] = 0.0;
  return real_part(backward(h));
}

std::vector<cplx> Spectral::apply_multiplier(std::span<const cplx> u, std::span<const cplx> mult) const {
  auto h = forward(u);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] *= mult[i];
  return backward(h);
}

}  // namespace swhf
