#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace swhf {

using cplx = std::complex<double>;

/// Uniform periodic grid on [origin, origin + period)^dim with n points per axis.
/// Flat index i = i0 * n + i1 in 2D (axis 0 varies slowest).
struct GridSpec {
  int dim = 1;
  int n = 64;
  double period = 1.0;
  double origin = 0.0;

  void validate() const;
  double spacing() const { return period / n; }
  std::size_t size() const { return dim == 1 ? std::size_t(n) : std::size_t(n) * std::size_t(n); }
  /// h^dim, the quadrature weight of one node.
  double cell_volume() const { return dim == 1 ? spacing() : spacing() * spacing(); }
  double coordinate(std::size_t flat, int axis) const;
  std::vector<double> axis_nodes() const;
  bool operator==(const GridSpec&) const = default;
};

struct DensityField {
  GridSpec grid;
  std::vector<double> values;

  double mass() const;
  /// Rescales to unit mass and returns the factor applied.
  double normalize();
};

struct PotentialField {
  GridSpec grid;
  std::vector<double> values;

  double mean() const;
  /// Subtracts the mean and returns the removed offset.
  double project_zero_mean();
};

struct VelocityField {
  GridSpec grid;
  std::vector<std::vector<double>> components;  ///< one vector per axis
};

/// Builds a density by sampling f at the nodes and normalizing.
DensityField density_from(const GridSpec& grid, const std::function<double(double)>& f);

double sum_times_volume(const GridSpec& grid, std::span<const double> v);
double sup_norm(std::span<const double> v);

/// CSV columns: x (and y in 2D), value.
void write_field_csv(const GridSpec& grid, std::span<const double> values, std::ostream& out);

/// FFT-backed spectral operators on a GridSpec. Plans are created once and
/// shared by copies; all methods are const and safe to call concurrently.
class Spectral {
 public:
  explicit Spectral(const GridSpec& grid);

  const GridSpec& grid() const { return grid_; }

  /// Unnormalized forward DFT.
  std::vector<cplx> forward(std::span<const cplx> u) const;
  /// Inverse DFT including the 1/N factor.
  std::vector<cplx> backward(std::span<const cplx> u_hat) const;

  /// Signed wavenumber 2*pi*m/L of the Fourier index along one axis.
  double wavenumber(int index) const;
  /// |k|^2 for every flat Fourier index.
  const std::vector<double>& k_squared() const { return k2_; }
  /// k along an axis for every flat Fourier index, Nyquist set to zero.
  const std::vector<double>& k_axis(int axis) const { return k_axis_[axis]; }
  /// True where the 2/3-rule keeps the mode.
  const std::vector<char>& dealias_mask() const { return keep_; }

  std::vector<double> derivative(std::span<const double> f, int axis) const;
  std::vector<cplx> derivative(std::span<const cplx> f, int axis) const;
  std::vector<double> laplacian(std::span<const double> f) const;
  std::vector<cplx> laplacian(std::span<const cplx> f) const;
  /// Zeroes the modes removed by the 2/3 rule.
  std::vector<double> dealias(std::span<const double> f) const;
  /// Inverse transform of mult * forward(u).
  std::vector<cplx> apply_multiplier(std::span<const cplx> u, std::span<const cplx> mult) const;

 private:
  struct Plans;
  GridSpec grid_;
  std::shared_ptr<const Plans> plans_;
  std::vector<double> k2_;
  std::vector<double> k_axis_[2];
  std::vector<char> keep_;
};

}  // namespace swhf
