#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "swhf/errors.hpp"

namespace swhf::cli {

inline constexpr const char* kOutputRootEnv = "SWHF_OUTPUT_ROOT";

/// Malformed JSON, with 1-based line and column of the offending byte.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : ConfigError(what), line_(line), column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Every schema violation found, each prefixed by its dotted key path.
class SchemaError : public ConfigError {
 public:
  explicit SchemaError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// One-dimensional function as a sum of terms amp * shape(x - center).
/// Shapes: const, x, x2, sin(k .), cos(k .), gauss (width w).
struct Term {
  std::string kind = "const";
  double amp = 1.0;
  double k = 1.0;
  double center = 0.0;
  double width = 1.0;
  bool operator==(const Term&) const = default;
};

struct Function1D {
  std::vector<Term> terms;
  double value(double x) const;
  double d1(double x) const;
  double d2(double x) const;
  bool is_zero() const;
  bool operator==(const Function1D&) const = default;
};

struct NoiseConfig {
  double horizon = 1.0;
  double delta = 1.0 / 64;        ///< WZ interpolation width, T * 2^-level
  double path_dt = 1.0 / 4096;    ///< finest Brownian node spacing
  int delta_level() const;
  int path_level() const;
  bool operator==(const NoiseConfig&) const = default;
};

struct HamiltonianConfig {
  Function1D potential{{{"cos"}}};
  Function1D noise_potential{{{"sin"}}};
  double eta = 1.0;
  std::optional<double> torus_period;
  double x0 = 0.3;
  double p0 = 0.5;
  bool operator==(const HamiltonianConfig&) const = default;
};

struct FlowConfig {
  std::string scheme = "wz";         ///< wz | strat
  std::string strat_scheme = "heun"; ///< heun | avf
  int substeps = 4;                  ///< RK4 steps per WZ cell
  int stride = 1;
  bool operator==(const FlowConfig&) const = default;
};

struct GridConfig {
  int n = 128;
  double period = 1.0;
  double origin = 0.0;
  bool operator==(const GridConfig&) const = default;
};

struct DensityConfig {
  Function1D rho0{{{"gauss", 1.0, 1.0, 0.5, 0.1}}};
  Function1D v0;
  double time = 0.5;
  std::string method = "both";  ///< jacobian | mc | both
  std::uint64_t particles = 100000;
  bool operator==(const DensityConfig&) const = default;
};

struct VlasovConfig {
  std::uint64_t particles = 2000;
  double p_mean = 0.0;
  double p_sd = 1.0;
  int replications = 30;
  int dt_level = 8;
  int sample_stride = 8;
  bool control_variate = true;
  bool operator==(const VlasovConfig&) const = default;
};

struct NlsConfig {
  double lambda = 1.0;
  std::string driver = "wz";  ///< none | wz | strat | white | random
  std::vector<Function1D> modes{{{{"cos", 0.5, 2 * M_PI}}}};
  Function1D u0_re{{{"const"}, {"cos", 0.2, 2 * M_PI}}};
  Function1D u0_im;
  double dt = 1.0 / 1024;
  int stride = 4;
  double ou_rate = 1.0;
  double ou_scale = 1.0;
  double epsilon = 0.1;
  bool operator==(const NlsConfig&) const = default;
};

struct BridgeConfig {
  Function1D a{{{"const", 0.5}, {"sin", 0.3, 2 * M_PI}}};
  Function1D rho0{{{"const"}, {"cos", 0.3, 2 * M_PI}}};
  Function1D phi0{{{"sin", 0.4, 2 * M_PI}}};
  std::string laplacian = "half";  ///< half (nu = 1/2) | full (nu = 1)
  bool divergence_correction = true;
  double dt = 1.0 / 256;
  int stride = 1;
  bool operator==(const BridgeConfig&) const = default;
};

struct ConvergeConfig {
  std::string system = "phase_flow";  ///< phase_flow | snls
  std::vector<int> delta_levels{4, 5, 6, 7, 8, 9};
  int reference_level = 12;           ///< phase_flow: strat_flow grid T * 2^-level
  int reference_offset = 3;           ///< snls: reference delta level above the finest
  int substeps = 1;                   ///< snls: time steps per reference cell
  int replications = 100;
  int bootstrap_resamples = 1000;
  std::vector<double> epsilons;       ///< phase_flow: probability table when nonempty
  bool operator==(const ConvergeConfig&) const = default;
};

struct RunConfig {
  std::string subcommand;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out;  ///< empty: derived from the output root
  NoiseConfig noise;
  HamiltonianConfig hamiltonian;
  FlowConfig flow;
  GridConfig grid;
  DensityConfig density;
  VlasovConfig vlasov;
  NlsConfig nls;
  BridgeConfig bridge;
  ConvergeConfig converge;
  bool operator==(const RunConfig&) const = default;
};

const std::vector<std::string>& subcommands();

/// Command-line overrides applied on top of the file.
struct Overrides {
  std::optional<std::string> subcommand;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
};

/// Validates and fills defaults. Throws SchemaError listing every violation.
RunConfig parse_config(const nlohmann::json& document, const Overrides& overrides = {});
/// Parses JSON text first; ParseError on malformed input.
RunConfig parse_config_text(const std::string& text, const Overrides& overrides = {});
/// IoError when unreadable.
RunConfig parse_config_file(const std::filesystem::path& file, const Overrides& overrides = {});

/// Fully explicit configuration; reparses to an equal RunConfig.
nlohmann::json to_json(const RunConfig& config);

/// --out, then the config's "out", then $SWHF_OUTPUT_ROOT (or ./runs) / <subcommand>-<hash prefix>.
std::filesystem::path output_directory(const RunConfig& config);

/// Executes the subcommand, writes outputs, effective_config.json and manifest.json.
/// Returns 0 on success, 1 on a numerical or I/O failure.
int run(const RunConfig& config, std::ostream& log, bool quiet = false);

}  // namespace swhf::cli
