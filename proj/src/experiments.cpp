#include "swhf/experiments.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "swhf/errors.hpp"
#include "swhf/parallel.hpp"

namespace swhf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double phase_distance(const HamiltonianSpec& spec, const Vec& x, const Vec& p, const Vec& xr, const Vec& pr) {
  Vec dx = x - xr;
  if (spec.domain.torus)
    for (int i = 0; i < dx.size(); ++i) {
      const double L = spec.domain.period[i];
      dx[i] -= L * std::round(dx[i] / L);
    }
  return std::sqrt(dx.squaredNorm() + (p - pr).squaredNorm());
}

StudyAssembly assembly(int resamples) {
  StudyAssembly a;
  a.bootstrap_resamples = resamples;
  return a;
}

void check_levels(const std::vector<int>& levels, int reference_level) {
  if (levels.empty()) throw InsufficientDataError("convergence study: no delta levels");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 0) throw ConfigError("convergence study: delta levels must be nonnegative");
    if (i && levels[i] <= levels[i - 1]) throw ConfigError("convergence study: delta levels must increase strictly");
  }
  if (levels.back() >= reference_level) throw ConfigError("convergence study: reference must be finer than every level");
}

}  // namespace

ExactSolution additive_exact_solution(double eta) {
  return [eta](const PhaseState& s0, const BrownianPath& path) {
    std::vector<PhaseState> out(path.nodes());
    const double h = path.spacing();
    double integral = 0.0;
    for (std::size_t j = 0; j < path.nodes(); ++j) {
      if (j) integral += 0.5 * h * (path.value(j - 1) + path.value(j));
      const double t = path.time(j);
      out[j].t = t;
      out[j].p = s0.p.array() - eta * path.value(j);
      out[j].x = s0.x.array() + s0.p.array() * t - eta * integral;
    }
    return out;
  };
}

ConvergenceReport strong_convergence_study(const PhaseFlowStudy& st) {
  st.spec.validate();
  check_levels(st.delta_levels, st.reference_level);
  if (st.replications < 1) throw ConfigError("convergence study: replications must be positive");
  if (st.reference == PhaseFlowStudy::Reference::kExact && !st.exact)
    throw ConfigError("convergence study: exact reference requested without a solution");
  const std::size_t L = st.delta_levels.size();

  ConvergenceReport report;
  report.system = "phase_flow";
  report.norm = "sup_t |(x,p)|";
  report.seed = st.seed;
  report.horizon = st.horizon;
  report.dt = st.horizon * std::ldexp(1.0, -st.reference_level);
  report.reference_level = st.reference_level;
  report.per_path.assign(st.replications, std::vector<double>(L, kNaN));

  parallel_for(st.replications, st.workers, [&](std::size_t m) {
    const auto path =
        std::make_shared<const BrownianPath>(sample_brownian(derive_seed(st.seed, m), st.horizon, st.reference_level));
    std::vector<Vec> xr, pr;
    if (st.reference == PhaseFlowStudy::Reference::kExact) {
      for (const auto& s : st.exact(st.initial, *path)) {
        xr.push_back(s.x);
        pr.push_back(s.p);
      }
    } else {
      FlowOptions opt;
      opt.scheme = st.scheme;
      const auto ref = strat_flow(st.spec, st.initial, *path, st.reference_level, opt);
      if (!ref.completed()) return;
      xr = ref.x;
      pr = ref.p;
    }
    for (std::size_t l = 0; l < L; ++l) {
      const int level = st.delta_levels[l];
      const auto r = wz_flow(st.spec, st.initial, WongZakaiMesh(path, level), 1 << (st.reference_level - level));
      if (!r.completed()) continue;
      if (r.x.size() != xr.size()) throw ConfigError("convergence study: level and reference grids differ");
      double sup = 0.0;
      for (std::size_t i = 0; i < xr.size(); ++i)
        sup = std::max(sup, phase_distance(st.spec, r.x[i], r.p[i], xr[i], pr[i]));
      report.per_path[m][l] = std::isfinite(sup) ? sup : kNaN;
    }
  });
  assemble_report(report, st.delta_levels, assembly(st.bootstrap_resamples));
  return report;
}

ConvergenceReport strong_convergence_study(const NlsSpec& spec, const WaveField& u0, const NlsStudyOptions& options) {
  return nls_convergence_study(spec, u0, options);
}

ConvergenceReport strong_convergence_study(const WhfStudy& st) {
  const int ref_level = st.delta_levels.empty() ? 0 : st.delta_levels.back() + st.reference_offset;
  check_levels(st.delta_levels, ref_level);
  if (st.reference_offset < 1 || st.replications < 1) throw ConfigError("whf study: bad offset or replications");
  const double ratio = st.horizon / st.dt;
  const auto steps = static_cast<int>(std::llround(ratio));
  if (!(st.dt > 0.0) || std::abs(ratio - steps) > 1e-9 * ratio) throw ConfigError("whf study: dt must divide T");
  const double cell_ratio = st.horizon * std::ldexp(1.0, -ref_level) / st.dt;
  if (std::abs(cell_ratio - std::round(cell_ratio)) > 1e-9 * std::max(1.0, cell_ratio) || cell_ratio < 0.5)
    throw ConfigError("whf study: dt must divide the reference cell width");
  const std::size_t L = st.delta_levels.size();
  const GridSpec& g = st.initial.rho.grid;
  const double h = g.cell_volume();

  ConvergenceReport report;
  report.system = "wasserstein.generalized";
  report.norm = "sup_t L2(rho, field)";
  report.seed = st.seed;
  report.horizon = st.horizon;
  report.dt = st.dt;
  report.reference_level = ref_level;
  report.per_path.assign(st.replications, std::vector<double>(L, kNaN));

  parallel_for(st.replications, st.workers, [&](std::size_t m) {
    const auto path = std::make_shared<const BrownianPath>(sample_brownian(derive_seed(st.seed, m), st.horizon, ref_level));
    auto run = [&](int level) -> std::vector<WhfState> {
      try {
        return whf_evolve(st.initial, st.spec, WongZakaiMesh(path, level), st.dt, steps);
      } catch (const StabilityError&) {
      } catch (const EvaluationError&) {
      } catch (const SupportError&) {
      } catch (const ConvergenceError&) {
      }
      return {};
    };
    const auto ref = run(ref_level);
    if (ref.empty()) return;
    for (std::size_t l = 0; l < L; ++l) {
      const auto r = run(st.delta_levels[l]);
      if (r.empty()) continue;
      double sup = 0.0;
      for (std::size_t k = 0; k < ref.size(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double dr = r[k].rho.values[i] - ref[k].rho.values[i];
          const double df = r[k].field[i] - ref[k].field[i];
          s += dr * dr + df * df;
        }
        sup = std::max(sup, std::sqrt(s * h));
      }
      report.per_path[m][l] = std::isfinite(sup) ? sup : kNaN;
    }
  });
  assemble_report(report, st.delta_levels, assembly(st.bootstrap_resamples));
  return report;
}

bool ProbabilityTable::nonincreasing_within_ci() const {
  for (std::size_t e = 0; e < epsilons.size(); ++e)
    for (std::size_t l = 1; l < delta_levels.size(); ++l) {
      const auto& coarse = at(l - 1, e);
      const auto& fine = at(l, e);
      if (fine.frequency > coarse.frequency && fine.low > coarse.high) return false;
    }
  return true;
}

ProbabilityTable probability_table(const ConvergenceReport& report, const std::vector<double>& epsilons,
                                   std::size_t min_replications) {
  if (report.per_path.size() < min_replications)
    throw InsufficientDataError("probability study needs at least " + std::to_string(min_replications) + " paths");
  if (epsilons.empty()) throw ConfigError("probability study: no epsilons");
  for (double e : epsilons)
    if (!(e > 0.0)) throw DomainError("probability study: epsilons must be positive");
  ProbabilityTable t;
  t.epsilons = epsilons;
  for (const auto& lv : report.levels) t.delta_levels.push_back(lv.delta_level);
  for (std::size_t l = 0; l < t.delta_levels.size(); ++l)
    for (double eps : epsilons) {
      ProbabilityCell c;
      c.delta_level = t.delta_levels[l];
      c.epsilon = eps;
      c.trials = report.per_path.size();
      for (const auto& row : report.per_path)
        if (!(row[l] <= eps)) ++c.exceedances;
      c.frequency = static_cast<double>(c.exceedances) / static_cast<double>(c.trials);
      std::tie(c.low, c.high) = wilson_interval(c.exceedances, c.trials);
      t.cells.push_back(c);
    }
  return t;
}

ProbabilityTable probability_convergence_study(const PhaseFlowStudy& study, const std::vector<double>& epsilons) {
  if (study.replications < 100) throw InsufficientDataError("probability study needs at least 100 paths");
  return probability_table(strong_convergence_study(study), epsilons);
}

void write_probability_csv(const ProbabilityTable& t, std::ostream& out) {
  out.precision(17);
  out << "delta_level,epsilon,exceedances,trials,frequency,low,high\n";
  for (const auto& c : t.cells)
    out << c.delta_level << ',' << c.epsilon << ',' << c.exceedances << ',' << c.trials << ',' << c.frequency << ','
        << c.low << ',' << c.high << "\n";
}

void write_per_path_csv(const ConvergenceReport& r, std::ostream& out) {
  out.precision(17);
  out << "path";
  for (const auto& lv : r.levels) out << ",level_" << lv.delta_level;
  out << "\n";
  for (std::size_t m = 0; m < r.per_path.size(); ++m) {
    out << m;
    for (double e : r.per_path[m]) out << ',' << e;
    out << "\n";
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw Error("sha256: digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::string file_sha256(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void RunRecord::add_artifact(const std::filesystem::path& dir, const std::string& relative) {
  const auto full = dir / relative;
  std::error_code ec;
  const auto size = std::filesystem::file_size(full, ec);
  if (ec) throw IoError("artifact missing: " + full.string());
  artifacts.push_back({relative, size, file_sha256(full)});
}

std::string config_hash(const nlohmann::json& config) { return sha256_hex(config.dump()); }

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : r.artifacts) arts.push_back({{"path", a.path}, {"bytes", a.bytes}, {"sha256", a.sha256}});
  nlohmann::json j{{"config", r.config},
                   {"config_hash", r.config_hash},
                   {"seeds", r.seeds},
                   {"artifacts", arts},
                   {"wall_clock_seconds", r.wall_clock_seconds},
                   {"version", r.version},
                   {"status", r.status}};
  if (!r.failed_stage.empty()) j["failed_stage"] = r.failed_stage;
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

void write_manifest(const RunRecord& record, const std::filesystem::path& dir) {
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << to_json(record).dump(2) << "\n";
  if (!out) throw IoError("failed writing manifest in " + dir.string());
}

nlohmann::json to_json(const ConvergenceReport& r) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& lv : r.levels)
    levels.push_back({{"delta_level", lv.delta_level},
                      {"delta", lv.delta},
                      {"rms", lv.rms},
                      {"ci_low", lv.ci_low},
                      {"ci_high", lv.ci_high},
                      {"failures", lv.failures}});
  nlohmann::json j{{"system", r.system},         {"norm", r.norm},       {"levels", levels},
                   {"degenerate", r.degenerate}, {"replications", r.replications}, {"seed", r.seed},
                   {"horizon", r.horizon},       {"dt", r.dt},           {"reference_level", r.reference_level},
                   {"spec_hash", r.spec_hash}};
  if (r.fit)
    j["fit"] = {{"slope", r.fit->slope}, {"intercept", r.fit->intercept}, {"stderr", r.fit->stderr_slope}};
  else
    j["fit"] = nullptr;
  return j;
}

std::string_view version() { return "0.1.0"; }

}  // namespace swhf
