#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "swhf/cli.hpp"
#include "swhf/experiments.hpp"

using namespace swhf;
using namespace swhf::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("swhf_cli_" + name);
  fs::remove_all(d);
  return d;
}

std::vector<std::string> violations_of(const json& doc, const Overrides& o = {}) {
  try {
    parse_config(doc, o);
  } catch (const SchemaError& e) {
    return e.violations();
  }
  return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json small_converge(const fs::path& out) {
  return {{"subcommand", "converge"},
          {"seed", 4},
          {"out", out.string()},
          {"converge",
           {{"delta_levels", {3, 4, 5}}, {"reference_level", 8}, {"replications", 12}, {"bootstrap_resamples", 50}}}};
}

}  // namespace

TEST_CASE("function terms") {
  Function1D f{{{"const", 0.7}, {"x", -1.2, 1.0, 0.3}, {"x2", 0.5, 1.0, -0.2}, {"sin", 0.4, 3.0, 0.1},
                {"cos", -0.9, 2.0}, {"gauss", 1.3, 1.0, 0.25, 0.4}}};
  auto direct = [](double x) {
    return 0.7 - 1.2 * (x - 0.3) + 0.5 * (x + 0.2) * (x + 0.2) + 0.4 * std::sin(3 * (x - 0.1)) -
           0.9 * std::cos(2 * x) + 1.3 * std::exp(-(x - 0.25) * (x - 0.25) / 0.32);
  };
  const double h = 1e-4;
  for (double x : {-1.1, -0.2, 0.0, 0.37, 1.9}) {
    CHECK(f.value(x) == doctest::Approx(direct(x)).epsilon(1e-14));
    CHECK(f.d1(x) == doctest::Approx((direct(x + h) - direct(x - h)) / (2 * h)).epsilon(1e-7));
    CHECK(f.d2(x) == doctest::Approx((direct(x + h) - 2 * direct(x) + direct(x - h)) / (h * h)).epsilon(1e-5));
  }
  CHECK(Function1D{}.is_zero());
  CHECK(Function1D{{{"sin", 0.0}}}.is_zero());
}

TEST_CASE("parse_config") {
  SUBCASE("minimal flow config gets the documented defaults") {
    const auto c = parse_config(json{{"subcommand", "flow"}, {"noise", {{"horizon", 2.0}}}});
    CHECK(c.subcommand == "flow");
    CHECK(c.seed == 1);
    CHECK(c.workers == 1);
    CHECK(c.noise.delta == 2.0 / 64);
    CHECK(c.noise.path_dt == 2.0 / 4096);
    CHECK(c.noise.delta_level() == 6);
    CHECK(c.noise.path_level() == 12);
    CHECK(c.flow.scheme == "wz");
    CHECK(c.flow.substeps == 4);
    CHECK(c.hamiltonian.eta == 1.0);
    CHECK(c.hamiltonian.potential == Function1D{{{"cos"}}});
    CHECK_FALSE(c.hamiltonian.torus_period.has_value());
    CHECK(c.grid.n == 128);
  }
  SUBCASE("shorthand function forms") {
    const auto c = parse_config(json{{"subcommand", "flow"},
                                     {"hamiltonian", {{"potential", 2.5}, {"noise_potential", {{"kind", "x"}}}}}});
    CHECK(c.hamiltonian.potential == Function1D{{{"const", 2.5}}});
    CHECK(c.hamiltonian.noise_potential.value(3.0) == 3.0);
  }
  SUBCASE("negative delta names the key path") {
    const auto v = violations_of(json{{"subcommand", "flow"}, {"noise", {{"delta", -1}}}});
    REQUIRE(v.size() == 1);
    CHECK(v[0].rfind("noise.delta:", 0) == 0);
  }
  SUBCASE("all violations are reported together") {
    const auto v = violations_of(json{{"subcommand", "flow"},
                                      {"noise", {{"delta", 0.3}, {"bogus", 1}}},
                                      {"grid", {{"n", 9}}},
                                      {"flow", {{"scheme", "euler"}}},
                                      {"hamiltonian", {{"potential", {{"kind", "tan"}}}}},
                                      {"colour", "red"}});
    CHECK(v.size() == 6);
    CHECK(mentions(v, "noise.delta: must be horizon * 2^-k"));
    CHECK(mentions(v, "noise.bogus: unknown key"));
    CHECK(mentions(v, "grid.n:"));
    CHECK(mentions(v, "flow.scheme: must be one of {wz, strat}"));
    CHECK(mentions(v, "hamiltonian.potential.kind:"));
    CHECK(mentions(v, "colour: unknown key"));
  }
  SUBCASE("type errors") {
    const auto v = violations_of(json{{"subcommand", "converge"},
                                      {"seed", -3},
                                      {"workers", "many"},
                                      {"converge", {{"delta_levels", {5, 4, 6}}, {"epsilons", {0.1}}, {"replications", 20}}}});
    CHECK(mentions(v, "seed: expected a nonnegative integer"));
    CHECK(mentions(v, "workers: expected an integer"));
    CHECK(mentions(v, "converge.delta_levels:"));
    CHECK(mentions(v, "converge.replications: must be at least 100"));
  }
  SUBCASE("cross-field checks apply only to the selected subcommand") {
    const json doc{{"noise", {{"horizon", 0.2}}}, {"nls", {{"dt", 0.3}}}};
    CHECK(mentions(violations_of(doc, {.subcommand = "nls"}), "nls.dt: must divide noise.horizon"));
    CHECK(violations_of(doc, {.subcommand = "flow"}).empty());
  }
  SUBCASE("subcommand handling") {
    CHECK(mentions(violations_of(json::object()), "subcommand: required"));
    CHECK(mentions(violations_of(json{{"subcommand", "flow"}}, {.subcommand = "nls"}), "config says \"flow\""));
    CHECK(mentions(violations_of(json::object(), {.subcommand = "plot"}), "unknown subcommand"));
    CHECK(parse_config(json::object(), {.subcommand = "bridge"}).subcommand == "bridge");
  }
  SUBCASE("overrides") {
    const auto c = parse_config(json{{"subcommand", "flow"}, {"seed", 3}, {"workers", 2}, {"out", "a"}},
                                {.seed = 99, .workers = 5, .out = "b"});
    CHECK(c.seed == 99);
    CHECK(c.workers == 5);
    CHECK(c.out == "b");
    CHECK(mentions(violations_of(json{{"subcommand", "flow"}}, {.workers = 0}), "workers"));
  }
  SUBCASE("malformed JSON reports line and column") {
    try {
      parse_config_text("{\n  \"seed\": 1,\n  \"noise\": {\"delta\": }\n}");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(e.column() == 22);
    }
    CHECK_THROWS_AS(parse_config_text("[1, 2]"), SchemaError);
    CHECK_THROWS_AS(parse_config_file("/nonexistent/config.json"), IoError);
  }
}

TEST_CASE("effective config round trip") {
  std::vector<RunConfig> configs{parse_config(json{{"subcommand", "flow"}})};
  for (const auto& name : subcommands())
    configs.push_back(parse_config_file(fs::path(SWHF_SOURCE_DIR) / "configs" / (name + ".json")));
  auto odd = configs.front();
  odd.hamiltonian.torus_period = 2.5;
  odd.hamiltonian.x0 = 0.1 + 0.2;
  odd.seed = 18446744073709551557ull;
  configs.push_back(odd);
  for (const auto& c : configs) {
    const auto text = to_json(c).dump(2);
    const auto back = parse_config_text(text);
    CHECK(back == c);
    CHECK(to_json(back).dump() == to_json(c).dump());
  }
}

TEST_CASE("output directory") {
  auto c = parse_config(json{{"subcommand", "flow"}});
  ::setenv(kOutputRootEnv, "/tmp/swhf-root", 1);
  const auto d = output_directory(c);
  CHECK(d.parent_path() == fs::path("/tmp/swhf-root"));
  CHECK(d.filename().string().rfind("flow-", 0) == 0);
  auto c2 = c;
  c2.seed = 2;
  CHECK(output_directory(c2) != d);
  ::unsetenv(kOutputRootEnv);
  CHECK(output_directory(c).parent_path() == fs::path("runs"));
  c.out = "/tmp/elsewhere";
  CHECK(output_directory(c) == fs::path("/tmp/elsewhere"));
}

TEST_CASE("run") {
  std::ostringstream log;
  SUBCASE("converge writes a report with a slope and a consistent manifest") {
    const auto dir = scratch("converge");
    REQUIRE(run(parse_config(small_converge(dir)), log) == 0);
    const auto csv = slurp(dir / "convergence.csv");
    CHECK(csv.find("# slope=") != std::string::npos);
    CHECK(csv.find("delta_level,delta,rms,ci_low,ci_high,failures") != std::string::npos);
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["status"] == "ok");
    CHECK(manifest["config_hash"] == config_hash(manifest["config"]));
    CHECK(manifest["artifacts"].size() == 5);
    for (const auto& a : manifest["artifacts"]) {
      const auto p = dir / a["path"].get<std::string>();
      REQUIRE(fs::exists(p));
      CHECK(a["bytes"] == fs::file_size(p));
      CHECK(a["sha256"] == file_sha256(p));
    }
    CHECK(parse_config_file(dir / "effective_config.json") == parse_config(small_converge(dir)));
    fs::remove_all(dir);
  }
  SUBCASE("single-worker reruns are bitwise identical and worker count does not matter") {
    const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    REQUIRE(run(parse_config(small_converge(a)), log) == 0);
    REQUIRE(run(parse_config(small_converge(b)), log) == 0);
    REQUIRE(run(parse_config(small_converge(c), {.workers = 3}), log) == 0);
    for (const char* f : {"convergence.csv", "per_path.csv"}) {
      CHECK(slurp(a / f) == slurp(b / f));
      CHECK(slurp(a / f) == slurp(c / f));
    }
    for (const auto& d : {a, b, c}) fs::remove_all(d);
  }
  SUBCASE("every example config runs") {
    for (const auto& name : subcommands()) {
      if (name == "converge" || name == "density") continue;
      const auto dir = scratch("example_" + name);
      const auto c = parse_config_file(fs::path(SWHF_SOURCE_DIR) / "configs" / (name + ".json"),
                                       {.out = dir.string()});
      CHECK_MESSAGE(run(c, log, true) == 0, name);
      CHECK(json::parse(slurp(dir / "manifest.json"))["status"] == "ok");
      fs::remove_all(dir);
    }
  }
  SUBCASE("numerical failure is recorded with its stage") {
    const auto dir = scratch("unstable");
    const auto c = parse_config(json{{"subcommand", "bridge"}, {"out", dir.string()}, {"bridge", {{"a", 0}, {"dt", 1.0 / 64}}}});
    CHECK(run(c, log, true) == 1);
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["status"] == "failed");
    CHECK(manifest["failed_stage"] == "bridge_flow");
    CHECK(manifest["message"].get<std::string>().find("suggested dt") != std::string::npos);
    CHECK(fs::exists(dir / "effective_config.json"));
    fs::remove_all(dir);
  }
  SUBCASE("unwritable output directory") {
    const auto c = parse_config(json{{"subcommand", "flow"}, {"out", "/proc/swhf/out"}});
    CHECK(run(c, log, true) == 1);
  }
}

TEST_CASE("command-line binary") {
  const std::string bin = SWHF_CLI_BINARY;
  CHECK(shell(bin + " plot") == 2);
  CHECK(shell(bin) == 2);
  CHECK(shell(bin + " --help") == 0);
  const auto dir = scratch("binary");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad.json") << R"({"subcommand": "flow", "noise": {"delta": -1}})";
    std::ofstream(dir / "broken.json") << R"({"subcommand": )";
  }
  CHECK(shell(bin + " flow --config " + (dir / "bad.json").string()) == 2);
  CHECK(shell(bin + " flow --config " + (dir / "broken.json").string()) == 2);
  CHECK(shell(bin + " flow --config " + (dir / "missing.json").string()) == 2);
  const auto out = dir / "run";
  CHECK(shell(bin + " flow --quiet --seed 5 --out " + out.string()) == 0);
  CHECK(json::parse(slurp(out / "effective_config.json"))["seed"] == 5);
  CHECK(fs::exists(out / "trajectory.csv"));
  const std::string first = slurp(out / "trajectory.csv");
  CHECK(shell("SWHF_OUTPUT_ROOT=" + (dir / "root").string() + " " + bin + " flow --quiet --seed 5") == 0);
  std::size_t runs = 0;
  for (const auto& e : fs::directory_iterator(dir / "root")) {
    ++runs;
    CHECK(slurp(e.path() / "trajectory.csv") == first);
  }
  CHECK(runs == 1);
  fs::remove_all(dir);
}
