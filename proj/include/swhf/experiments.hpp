#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "swhf/phase_flow.hpp"
#include "swhf/snls.hpp"
#include "swhf/stats.hpp"
#include "swhf/wasserstein.hpp"

namespace swhf {

/// States at every node of the reference grid of `path`, for specs with a closed-form solution.
using ExactSolution = std::function<std::vector<PhaseState>(const PhaseState& initial, const BrownianPath& path)>;

/// g = I, f = 0, sigma(x) = x in 1D: p = p0 - eta B, x = x0 + p0 t - eta int B (trapezoid on the path).
ExactSolution additive_exact_solution(double eta);

struct PhaseFlowStudy {
  enum class Reference { kStratFlow, kExact };

  HamiltonianSpec spec;
  PhaseState initial;
  std::vector<int> delta_levels{4, 5, 6, 7, 8, 9};
  int reference_level = 12;  ///< strat_flow / comparison grid T * 2^-reference_level
  double horizon = 1.0;
  std::size_t replications = 100;
  std::uint64_t seed = 1;
  int workers = 1;
  int bootstrap_resamples = 1000;
  Reference reference = Reference::kStratFlow;
  ExactSolution exact;
  StratScheme scheme = StratScheme::kHeun;
};

/// Every level runs wz_flow with RK4 steps of the reference width on the same path; errors are the sup over
/// the reference grid of the phase-space distance (minimal image on a torus).
ConvergenceReport strong_convergence_study(const PhaseFlowStudy& study);

ConvergenceReport strong_convergence_study(const NlsSpec& spec, const WaveField& u0, const NlsStudyOptions& options);

struct WhfStudy {
  WhfState initial;
  WhfSpec spec;
  std::vector<int> delta_levels{3, 4, 5};
  int reference_offset = 3;
  double dt = 1.0 / 1024;  ///< must divide the reference cell width
  double horizon = 1.0;
  std::size_t replications = 20;
  std::uint64_t seed = 1;
  int workers = 1;
  int bootstrap_resamples = 1000;
};

/// Errors are the sup over steps of the L2 distance of (rho, field) to the finest-delta reference.
ConvergenceReport strong_convergence_study(const WhfStudy& study);

struct ProbabilityCell {
  int delta_level = 0;
  double epsilon = 0.0;
  std::size_t exceedances = 0;
  std::size_t trials = 0;
  double frequency = 0.0;
  double low = 0.0;   ///< Wilson 95%
  double high = 0.0;
};

struct ProbabilityTable {
  std::vector<int> delta_levels;
  std::vector<double> epsilons;
  std::vector<ProbabilityCell> cells;  ///< level-major

  const ProbabilityCell& at(std::size_t level, std::size_t eps) const { return cells[level * epsilons.size() + eps]; }
  /// For every epsilon, each refinement either lowers the frequency or keeps the Wilson intervals overlapping.
  bool nonincreasing_within_ci() const;
};

/// Exceedance frequencies P(sup error > eps) from a report's per-path errors; failed runs count as exceedances.
ProbabilityTable probability_table(const ConvergenceReport& report, const std::vector<double>& epsilons,
                                   std::size_t min_replications = 100);

ProbabilityTable probability_convergence_study(const PhaseFlowStudy& study, const std::vector<double>& epsilons);

/// Columns: delta_level, epsilon, exceedances, trials, frequency, low, high.
void write_probability_csv(const ProbabilityTable& table, std::ostream& out);
/// Columns: path, then one column per delta level.
void write_per_path_csv(const ConvergenceReport& report, std::ostream& out);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& file);

struct Artifact {
  std::string path;  ///< relative to the run directory
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct RunRecord {
  nlohmann::json config;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<Artifact> artifacts;
  double wall_clock_seconds = 0.0;
  std::string version;
  std::string status = "ok";
  std::string failed_stage;
  std::string message;

  /// Adds a file in `dir` with its size and checksum.
  void add_artifact(const std::filesystem::path& dir, const std::string& relative);
};

/// SHA-256 of the compact dump of `config` (keys sorted).
std::string config_hash(const nlohmann::json& config);

nlohmann::json to_json(const RunRecord& record);
/// Writes dir/manifest.json; IoError when the directory is not writable.
void write_manifest(const RunRecord& record, const std::filesystem::path& dir);

nlohmann::json to_json(const ConvergenceReport& report);

/// Library version string recorded in manifests.
std::string_view version();

}  // namespace swhf
