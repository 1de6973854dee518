#include "swhf/noise.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "swhf/binary_io.hpp"
#include "swhf/errors.hpp"
#include "swhf/philox.hpp"

namespace swhf {

namespace {

void check_capacity(int level, int dim) {
  if (level < 0) throw DomainError("Brownian path level must be >= 0");
  if (level >= 62) throw CapacityError("Brownian path level " + std::to_string(level) + " exceeds capacity");
  const std::uint64_t nodes = (std::uint64_t{1} << level) + 1;
  if (nodes * static_cast<std::uint64_t>(dim) > kMaxPathNodes)
    throw CapacityError("Brownian path with " + std::to_string(nodes) + " nodes x " + std::to_string(dim) +
                        " components exceeds the cap of 2^26 stored values");
}

}  // namespace

BrownianPath::BrownianPath(double horizon, int level, int dim, std::uint64_t seed, std::vector<double> values)
    : horizon_(horizon), level_(level), dim_(dim), seed_(seed), values_(std::move(values)) {
  if (!(horizon > 0.0)) throw DomainError("Brownian path horizon must be positive");
  if (dim < 1) throw DomainError("Brownian path dimension must be >= 1");
  check_capacity(level, dim);
  if (values_.size() != nodes() * static_cast<std::size_t>(dim))
    throw DomainError("Brownian path value count does not match level and dimension");
}

BrownianPath BrownianPath::restrict_to(int coarse_level) const {
  if (coarse_level < 0 || coarse_level > level_) throw DomainError("restriction level out of range");
  const std::size_t stride = std::size_t{1} << (level_ - coarse_level);
  const std::size_t coarse_nodes = (std::size_t{1} << coarse_level) + 1;
  std::vector<double> v(coarse_nodes * static_cast<std::size_t>(dim_));
  for (int c = 0; c < dim_; ++c)
    for (std::size_t j = 0; j < coarse_nodes; ++j) v[c * coarse_nodes + j] = value(j * stride, c);
  return BrownianPath(horizon_, coarse_level, dim_, seed_, std::move(v));
}

BrownianPath BrownianPath::scaled(double factor) const {
  std::vector<double> v = values_;
  for (double& x : v) x *= factor;
  return BrownianPath(horizon_, level_, dim_, seed_, std::move(v));
}

BrownianPath sample_brownian(std::uint64_t seed, double horizon, int level, int dim) {
  if (!(horizon > 0.0)) throw DomainError("sample_brownian: horizon must be positive");
  if (dim < 1) throw DomainError("sample_brownian: dimension must be >= 1");
  check_capacity(level, dim);
  std::vector<double> v(2 * static_cast<std::size_t>(dim));
  for (int c = 0; c < dim; ++c) {
    v[2 * c] = 0.0;
    v[2 * c + 1] = std::sqrt(horizon) * keyed_normal(seed, Stream::kBrownian, 0, 1, static_cast<std::uint32_t>(c));
  }
  BrownianPath path(horizon, 0, dim, seed, std::move(v));
  for (int l = 0; l < level; ++l) path = refine(path);
  return path;
}

BrownianPath refine(const BrownianPath& path) {
  const int fine_level = path.level() + 1;
  check_capacity(fine_level, path.dim());
  const std::size_t coarse_nodes = path.nodes();
  const std::size_t fine_nodes = 2 * coarse_nodes - 1;
  // Bridge midpoint variance: (coarse spacing) / 4 = T * 2^-(L+2).
  const double sd = std::sqrt(path.spacing() / 4.0);
  std::vector<double> v(fine_nodes * static_cast<std::size_t>(path.dim()));
  for (int c = 0; c < path.dim(); ++c) {
    double* out = v.data() + c * fine_nodes;
    for (std::size_t j = 0; j < coarse_nodes; ++j) out[2 * j] = path.value(j, c);
    for (std::size_t j = 0; j + 1 < coarse_nodes; ++j) {
      const double z = keyed_normal(path.seed(), Stream::kBrownian, static_cast<std::uint32_t>(fine_level), 2 * j + 1,
                                    static_cast<std::uint32_t>(c));
      out[2 * j + 1] = 0.5 * (out[2 * j] + out[2 * j + 2]) + sd * z;
    }
  }
  return BrownianPath(path.horizon(), fine_level, path.dim(), path.seed(), std::move(v));
}

WongZakaiMesh::WongZakaiMesh(std::shared_ptr<const BrownianPath> path, int level)
    : base(std::move(path)), delta_level(level) {
  if (!base) throw ConfigError("Wong-Zakai mesh needs a Brownian path");
  if (level < 0 || level > base->level())
    throw DomainError("Wong-Zakai delta level " + std::to_string(level) + " must lie in [0, path level " +
                      std::to_string(base->level()) + "]");
}

double WongZakaiMesh::delta() const { return base->horizon() / static_cast<double>(cells()); }

double WongZakaiMesh::node_value(std::size_t k, int component) const {
  return base->value(k << (base->level() - delta_level), component);
}

double WongZakaiMesh::cell_slope(std::size_t k, int component) const {
  return (node_value(k + 1, component) - node_value(k, component)) / delta();
}

std::size_t WongZakaiMesh::cell_of(double t) const {
  const double s = t / delta();
  const auto k = static_cast<std::size_t>(std::floor(s));
  return std::min(k, cells() - 1);
}

WzValue wz_eval(const WongZakaiMesh& mesh, double t, int component) {
  const double horizon = mesh.horizon();
  if (!(t >= 0.0 && t <= horizon)) throw DomainError("wz_eval: t outside [0, T]");
  if (component < 0 || component >= mesh.base->dim()) throw DomainError("wz_eval: component out of range");
  const std::size_t k = mesh.cell_of(t);
  const double left = mesh.node_value(k, component);
  const double slope = mesh.cell_slope(k, component);
  const double tk = static_cast<double>(k) * mesh.delta();
  // Exact node values avoid round-off in left + slope*(t - tk).
  if (t == tk) return {left, slope};
  if (k + 1 == mesh.cells() && t == horizon) return {mesh.node_value(k + 1, component), slope};
  return {left + slope * (t - tk), slope};
}

void WienerField::validate() const {
  if (!paths) throw ConfigError("Wiener field has no component paths");
  if (modes.empty()) throw ConfigError("Wiener field needs at least one mode");
  if (static_cast<int>(modes.size()) != paths->dim())
    throw ConfigError("Wiener field has " + std::to_string(modes.size()) + " modes but " +
                      std::to_string(paths->dim()) + " component paths");
  for (const auto& m : modes)
    if (!m.value || !m.gradient) throw ConfigError("Wiener field mode is missing value or gradient");
}

WienerFieldEval wiener_field_eval(const WienerField& field, int delta_level, double t, std::span<const double> x) {
  field.validate();
  const WongZakaiMesh mesh(field.paths, delta_level);
  WienerFieldEval out;
  out.values.assign(x.size(), 0.0);
  out.derivatives.assign(x.size(), 0.0);
  out.gradients.assign(x.size(), 0.0);
  for (std::size_t k = 0; k < field.modes.size(); ++k) {
    const WzValue b = wz_eval(mesh, t, static_cast<int>(k));
    const auto& mode = field.modes[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double q = mode.value(x[i]);
      out.values[i] += q * b.value;
      out.derivatives[i] += q * b.derivative;
      out.gradients[i] += mode.gradient(x[i]) * b.value;
    }
  }
  return out;
}

std::vector<double> wiener_field_increment(const WienerField& field, int delta_level, double t0, double t1,
                                           std::span<const double> x) {
  field.validate();
  const WongZakaiMesh mesh(field.paths, delta_level);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t k = 0; k < field.modes.size(); ++k) {
    const double db = wz_eval(mesh, t1, static_cast<int>(k)).value - wz_eval(mesh, t0, static_cast<int>(k)).value;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += field.modes[k].value(x[i]) * db;
  }
  return out;
}

DispersionDriver::DispersionDriver(double ou_rate, double ou_scale, double epsilon, double horizon, double fine_step,
                                   std::uint64_t seed)
    : rate_(ou_rate), scale_(ou_scale), epsilon_(epsilon), horizon_(horizon), step_(fine_step), seed_(seed) {
  if (!(ou_rate > 0.0) || !(ou_scale > 0.0) || !(epsilon > 0.0) || !(horizon > 0.0) || !(fine_step > 0.0))
    throw ConfigError("dispersion driver parameters must be positive");
  const double fast_horizon = horizon / (epsilon * epsilon);
  const double count = std::ceil(fast_horizon / fine_step - 1e-9);
  if (count + 1 > static_cast<double>(kMaxPathNodes))
    throw CapacityError("dispersion driver grid exceeds the 2^26 node cap");
  const auto n = static_cast<std::size_t>(count) + 1;
  const double decay = std::exp(-rate_ * step_);
  const double innovation = scale_ * std::sqrt(1.0 - decay * decay);
  m_.resize(n);
  cumulative_.resize(n);
  m_[0] = scale_ * keyed_normal(seed, Stream::kDispersion, 0, 0);
  cumulative_[0] = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    m_[j] = decay * m_[j - 1] + innovation * keyed_normal(seed, Stream::kDispersion, 0, j);
    cumulative_[j] = cumulative_[j - 1] + 0.5 * step_ * (m_[j - 1] + m_[j]);
  }
}

double DispersionDriver::cumulative(double fast_time) const {
  const double pos = fast_time / step_;
  auto j = static_cast<std::size_t>(std::floor(pos));
  if (j >= m_.size() - 1) j = m_.size() - 2;
  const double tau = fast_time - static_cast<double>(j) * step_;
  if (tau == 0.0) return cumulative_[j];
  return cumulative_[j] + m_[j] * tau + (m_[j + 1] - m_[j]) * tau * tau / (2.0 * step_);
}

double DispersionDriver::integral(double t1, double t2) const {
  const double tol = 1e-12 * horizon_;
  if (!(t1 >= -tol && t2 <= horizon_ + tol && t1 <= t2))
    throw DomainError("dispersion_integral: interval outside the stored horizon");
  if (t1 == t2) return 0.0;
  const double e2 = epsilon_ * epsilon_;
  return epsilon_ * (cumulative(std::max(t2, 0.0) / e2) - cumulative(std::max(t1, 0.0) / e2));
}

double dispersion_integral(const DispersionDriver& driver, double t1, double t2) { return driver.integral(t1, t2); }

void write_path_binary(const BrownianPath& path, std::ostream& out) {
  binio::put_magic(out, "SWHFPATH");
  binio::put<double>(out, path.horizon());
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(path.level()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(path.dim()));
  binio::put<std::uint64_t>(out, path.seed());
  for (double v : path.values()) binio::put<double>(out, v);
  if (!out) throw IoError("failed writing path container");
}

BrownianPath read_path_binary(std::istream& in) {
  binio::expect_magic(in, "SWHFPATH");
  const auto horizon = binio::get<double>(in);
  const auto level = static_cast<int>(binio::get<std::uint32_t>(in));
  const auto dim = static_cast<int>(binio::get<std::uint32_t>(in));
  const auto seed = binio::get<std::uint64_t>(in);
  check_capacity(level, dim);
  std::vector<double> v(((std::size_t{1} << level) + 1) * static_cast<std::size_t>(dim));
  for (double& x : v) x = binio::get<double>(in);
  return BrownianPath(horizon, level, dim, seed, std::move(v));
}

void write_path_csv(const BrownianPath& path, std::ostream& out) {
  out << "t";
  for (int c = 0; c < path.dim(); ++c) out << ",B" << c;
  out << '\n' << std::setprecision(17);
  for (std::size_t j = 0; j < path.nodes(); ++j) {
    out << path.time(j);
    for (int c = 0; c < path.dim(); ++c) out << ',' << path.value(j, c);
    out << '\n';
  }
}

}  // namespace swhf
