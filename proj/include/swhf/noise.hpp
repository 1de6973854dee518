#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace swhf {

/// Maximum number of stored path values (nodes times components).
inline constexpr std::uint64_t kMaxPathNodes = std::uint64_t{1} << 26;

/// Brownian motion sampled on the dyadic grid t_j = j * T * 2^-level.
///
/// Values are generated top-down by Brownian-bridge midpoint insertion, each
/// midpoint drawn from a counter-based generator keyed by (seed, level, node),
/// so a level-L path is exactly the restriction of its level-(L+1) refinement.
class BrownianPath {
 public:
  BrownianPath() = default;
  BrownianPath(double horizon, int level, int dim, std::uint64_t seed, std::vector<double> values);

  double horizon() const { return horizon_; }
  int level() const { return level_; }
  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  /// Number of grid nodes, 2^level + 1.
  std::size_t nodes() const { return (std::size_t{1} << level_) + 1; }
  double spacing() const { return horizon_ / static_cast<double>(std::size_t{1} << level_); }
  double time(std::size_t j) const { return static_cast<double>(j) * spacing(); }

  double value(std::size_t j, int component = 0) const {
    return values_[static_cast<std::size_t>(component) * nodes() + j];
  }
  std::span<const double> component(int c) const {
    return {values_.data() + static_cast<std::size_t>(c) * nodes(), nodes()};
  }
  /// Component-major storage: component c occupies [c*nodes(), (c+1)*nodes()).
  const std::vector<double>& values() const { return values_; }

  /// Node values of this path at a coarser level (restriction).
  BrownianPath restrict_to(int coarse_level) const;

  /// Elementwise scaled copy (used for mirrored or superposed drivers).
  BrownianPath scaled(double factor) const;

  bool operator==(const BrownianPath&) const = default;

 private:
  double horizon_ = 0.0;
  int level_ = 0;
  int dim_ = 1;
  std::uint64_t seed_ = 0;
  std::vector<double> values_;
};

BrownianPath sample_brownian(std::uint64_t seed, double horizon, int level, int dim = 1);

/// Inserts bridge midpoints; the result has level() + 1.
BrownianPath refine(const BrownianPath& path);

/// Path plus dyadic interpolation width delta = T * 2^-delta_level.
struct WongZakaiMesh {
  std::shared_ptr<const BrownianPath> base;
  int delta_level = 0;

  WongZakaiMesh() = default;
  WongZakaiMesh(std::shared_ptr<const BrownianPath> path, int level);

  double delta() const;
  std::size_t cells() const { return std::size_t{1} << delta_level; }
  double horizon() const { return base->horizon(); }
  /// B at mesh node k.
  double node_value(std::size_t k, int component = 0) const;
  /// Constant derivative of the interpolant on cell k.
  double cell_slope(std::size_t k, int component = 0) const;
  /// Cell containing t, with t = T mapped to the last cell.
  std::size_t cell_of(double t) const;
};

struct WzValue {
  double value = 0.0;
  double derivative = 0.0;
};

WzValue wz_eval(const WongZakaiMesh& mesh, double t, int component = 0);

/// One spatial mode of a finite-dimensional Wiener field on a 1D domain.
struct SpatialMode {
  std::function<double(double)> value;
  std::function<double(double)> gradient;
};

/// W(t,x) = sum_k q_k(x) beta_k(t); component k of `paths` drives mode k.
struct WienerField {
  std::vector<SpatialMode> modes;
  std::shared_ptr<const BrownianPath> paths;

  void validate() const;
};

struct WienerFieldEval {
  std::vector<double> values;       ///< W_delta(t, x_i)
  std::vector<double> derivatives;  ///< time derivative of W_delta at (t, x_i)
  std::vector<double> gradients;    ///< spatial gradient of W_delta at (t, x_i)
};

WienerFieldEval wiener_field_eval(const WienerField& field, int delta_level, double t,
                                  std::span<const double> x);

/// W_delta(t1, x_i) - W_delta(t0, x_i) on the grid.
std::vector<double> wiener_field_increment(const WienerField& field, int delta_level, double t0, double t1,
                                           std::span<const double> x);

/// Stationary Ornstein-Uhlenbeck process m with E[m(0)m(t)] = s^2 exp(-theta t),
/// sampled exactly on a fine grid in the fast time s = t / epsilon^2.
class DispersionDriver {
 public:
  DispersionDriver(double ou_rate, double ou_scale, double epsilon, double horizon, double fine_step,
                   std::uint64_t seed);

  double ou_rate() const { return rate_; }
  double ou_scale() const { return scale_; }
  double epsilon() const { return epsilon_; }
  double horizon() const { return horizon_; }
  std::uint64_t seed() const { return seed_; }
  /// Limiting diffusion coefficient sigma_0^2 = 2 int_0^inf E[m(0)m(t)] dt = 2 s^2 / theta.
  double sigma0_squared() const { return 2.0 * scale_ * scale_ / rate_; }
  std::span<const double> samples() const { return m_; }
  double fine_step() const { return step_; }

  /// int_{t1}^{t2} (1/eps) m(s/eps^2) ds by trapezoidal quadrature of the stored samples.
  double integral(double t1, double t2) const;

 private:
  double cumulative(double fast_time) const;

  double rate_;
  double scale_;
  double epsilon_;
  double horizon_;
  double step_;
  std::uint64_t seed_;
  std::vector<double> m_;
  std::vector<double> cumulative_;
};

double dispersion_integral(const DispersionDriver& driver, double t1, double t2);

// Serialization. Binary layout (little-endian): 8-byte magic "SWHFPATH",
// f64 horizon, u32 level, u32 dim, u64 seed, then nodes*dim f64 values
// (component-major).
void write_path_binary(const BrownianPath& path, std::ostream& out);
BrownianPath read_path_binary(std::istream& in);
/// CSV with header "t,B0,B1,...".
void write_path_csv(const BrownianPath& path, std::ostream& out);

}  // namespace swhf
