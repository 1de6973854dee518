#include "swhf/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "swhf/bridge.hpp"
#include "swhf/experiments.hpp"
#include "swhf/philox.hpp"
#include "swhf/vlasov.hpp"
#include "swhf/wasserstein.hpp"

namespace swhf::cli {

using nlohmann::json;

namespace {

std::string join_violations(const std::vector<std::string>& v) {
  std::string s = "invalid configuration:";
  for (const auto& e : v) s += "\n  " + e;
  return s;
}

const std::vector<std::string> kTermKinds{"const", "x", "x2", "sin", "cos", "gauss"};

/// Dyadic level of h / d, or -1 when d is not h * 2^-level.
int dyadic_level(double horizon, double d) {
  if (!(d > 0.0) || !(horizon > 0.0) || !std::isfinite(d)) return -1;
  const double r = std::log2(horizon / d);
  const int level = static_cast<int>(std::lround(r));
  if (level < 0 || level > 26) return -1;
  if (std::abs(std::ldexp(horizon, -level) - d) > 1e-12 * d) return -1;
  return level;
}

bool integral_ratio(double a, double b) {
  const double r = a / b;
  return r >= 1.0 - 1e-9 && std::abs(r - std::round(r)) <= 1e-9 * r;
}

/// Walks one JSON object, collecting violations under dotted paths and flagging unused keys on finish().
class Reader {
 public:
  Reader(const json& obj, std::string prefix, std::vector<std::string>& errors)
      : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {}

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  void fail(const std::string& key, const std::string& msg) { errors_.push_back(path(key) + ": " + msg); }

  const json* get(const std::string& key) {
    used_.insert(key);
    if (!obj_.is_object()) return nullptr;
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  double number(const std::string& key, double def, const std::function<bool(double)>& ok = {},
                const std::string& requirement = "") {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_number()) {
      fail(key, "expected a number");
      return def;
    }
    const double x = v->get<double>();
    if (!std::isfinite(x) || (ok && !ok(x))) {
      fail(key, "must be " + requirement + " (got " + v->dump() + ")");
      return def;
    }
    return x;
  }

  std::int64_t integer(const std::string& key, std::int64_t def, const std::function<bool(std::int64_t)>& ok = {},
                       const std::string& requirement = "") {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_number_integer()) {
      fail(key, "expected an integer");
      return def;
    }
    const auto x = v->is_number_unsigned() && v->get<std::uint64_t>() > std::uint64_t(INT64_MAX)
                       ? INT64_MAX
                       : v->get<std::int64_t>();
    if (ok && !ok(x)) {
      fail(key, "must be " + requirement + " (got " + v->dump() + ")");
      return def;
    }
    return x;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      fail(key, "expected a nonnegative integer");
      return def;
    }
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_boolean()) {
      fail(key, "expected true or false");
      return def;
    }
    return v->get<bool>();
  }

  std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& options) {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_string()) {
      fail(key, "expected a string");
      return def;
    }
    const auto s = v->get<std::string>();
    for (const auto& o : options)
      if (o == s) return s;
    std::string list;
    for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
    fail(key, "must be one of {" + list + "} (got \"" + s + "\")");
    return def;
  }

  std::string text(const std::string& key, const std::string& def) {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_string()) {
      fail(key, "expected a string");
      return def;
    }
    return v->get<std::string>();
  }

  Function1D function(const std::string& key, const Function1D& def) {
    const json* v = get(key);
    if (!v) return def;
    return parse_function(*v, path(key));
  }

  std::vector<Function1D> functions(const std::string& key, const std::vector<Function1D>& def) {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_array()) {
      fail(key, "expected a list of functions");
      return def;
    }
    std::vector<Function1D> out;
    for (std::size_t i = 0; i < v->size(); ++i)
      out.push_back(parse_function((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  template <class T>
  std::vector<T> list(const std::string& key, const std::vector<T>& def) {
    const json* v = get(key);
    if (!v) return def;
    bool good = v->is_array();
    if (good)
      for (const auto& e : *v) good = good && (std::is_integral_v<T> ? e.is_number_integer() : e.is_number());
    if (!good) {
      fail(key, std::is_integral_v<T> ? "expected a list of integers" : "expected a list of numbers");
      return def;
    }
    return v->get<std::vector<T>>();
  }

  Reader child(const std::string& key) {
    const json* v = get(key);
    if (v && !v->is_object()) {
      fail(key, "expected an object");
      v = nullptr;
    }
    return Reader(v ? *v : empty(), path(key), errors_);
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key())) errors_.push_back(path(it.key()) + ": unknown key");
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  Function1D parse_function(const json& v, const std::string& where) {
    Function1D f;
    if (v.is_number()) {
      f.terms.push_back({"const", v.get<double>(), 1.0, 0.0, 1.0});
      return f;
    }
    if (v.is_object()) {
      f.terms.push_back(parse_term(v, where));
      return f;
    }
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i)
        f.terms.push_back(parse_term(v[i], where + "[" + std::to_string(i) + "]"));
      return f;
    }
    errors_.push_back(where + ": expected a number, a term object or a list of terms");
    return f;
  }

  Term parse_term(const json& v, const std::string& where) {
    Term t;
    if (!v.is_object()) {
      errors_.push_back(where + ": expected a term object");
      return t;
    }
    Reader r(v, where, errors_);
    if (!v.contains("kind")) errors_.push_back(where + ".kind: required");
    t.kind = r.choice("kind", "const", kTermKinds);
    t.amp = r.number("amp", 1.0);
    t.k = r.number("k", 1.0);
    t.center = r.number("center", 0.0);
    t.width = r.number("width", 1.0, [](double w) { return w > 0.0; }, "positive");
    r.finish();
    return t;
  }

  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> used_;
};

json term_json(const Term& t) {
  return {{"kind", t.kind}, {"amp", t.amp}, {"k", t.k}, {"center", t.center}, {"width", t.width}};
}

json function_json(const Function1D& f) {
  json a = json::array();
  for (const auto& t : f.terms) a.push_back(term_json(t));
  return a;
}

}  // namespace

SchemaError::SchemaError(std::vector<std::string> violations)
    : ConfigError(join_violations(violations)), violations_(std::move(violations)) {}

double Function1D::value(double x) const {
  double s = 0.0;
  for (const auto& t : terms) {
    const double y = x - t.center;
    if (t.kind == "const") s += t.amp;
    else if (t.kind == "x") s += t.amp * y;
    else if (t.kind == "x2") s += t.amp * y * y;
    else if (t.kind == "sin") s += t.amp * std::sin(t.k * y);
    else if (t.kind == "cos") s += t.amp * std::cos(t.k * y);
    else if (t.kind == "gauss") s += t.amp * std::exp(-y * y / (2 * t.width * t.width));
  }
  return s;
}

double Function1D::d1(double x) const {
  double s = 0.0;
  for (const auto& t : terms) {
    const double y = x - t.center;
    if (t.kind == "x") s += t.amp;
    else if (t.kind == "x2") s += 2 * t.amp * y;
    else if (t.kind == "sin") s += t.amp * t.k * std::cos(t.k * y);
    else if (t.kind == "cos") s -= t.amp * t.k * std::sin(t.k * y);
    else if (t.kind == "gauss") {
      const double w2 = t.width * t.width;
      s -= t.amp * y / w2 * std::exp(-y * y / (2 * w2));
    }
  }
  return s;
}

double Function1D::d2(double x) const {
  double s = 0.0;
  for (const auto& t : terms) {
    const double y = x - t.center;
    if (t.kind == "x2") s += 2 * t.amp;
    else if (t.kind == "sin") s -= t.amp * t.k * t.k * std::sin(t.k * y);
    else if (t.kind == "cos") s -= t.amp * t.k * t.k * std::cos(t.k * y);
    else if (t.kind == "gauss") {
      const double w2 = t.width * t.width;
      s += t.amp * (y * y / w2 - 1.0) / w2 * std::exp(-y * y / (2 * w2));
    }
  }
  return s;
}

bool Function1D::is_zero() const {
  for (const auto& t : terms)
    if (t.amp != 0.0) return false;
  return true;
}

int NoiseConfig::delta_level() const { return dyadic_level(horizon, delta); }
int NoiseConfig::path_level() const { return dyadic_level(horizon, path_dt); }

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"flow", "density", "vlasov", "nls", "bridge", "converge"};
  return s;
}

RunConfig parse_config(const json& document, const Overrides& overrides) {
  std::vector<std::string> errors;
  RunConfig c;
  if (!document.is_object()) throw SchemaError({"<root>: expected a JSON object"});
  Reader root(document, "", errors);

  c.subcommand = root.choice("subcommand", "", subcommands());
  if (overrides.subcommand) {
    bool known = false;
    for (const auto& s : subcommands()) known = known || s == *overrides.subcommand;
    if (!known) errors.push_back("subcommand: unknown subcommand \"" + *overrides.subcommand + "\"");
    else if (!c.subcommand.empty() && c.subcommand != *overrides.subcommand)
      errors.push_back("subcommand: config says \"" + c.subcommand + "\" but \"" + *overrides.subcommand +
                       "\" was requested");
    c.subcommand = *overrides.subcommand;
  }
  if (c.subcommand.empty() && !document.contains("subcommand")) errors.push_back("subcommand: required");

  c.seed = root.unsigned_integer("seed", 1);
  c.workers = static_cast<int>(root.integer("workers", 1, [](auto w) { return w >= 1 && w <= 1024; }, "in [1, 1024]"));
  c.out = root.text("out", "");
  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.workers) {
    if (*overrides.workers < 1) errors.push_back("workers: must be at least 1");
    else c.workers = *overrides.workers;
  }
  if (overrides.out) c.out = *overrides.out;

  auto positive = [](double x) { return x > 0.0; };
  auto at_least = [](std::int64_t lo) { return [lo](std::int64_t x) { return x >= lo; }; };

  {
    auto r = root.child("noise");
    auto& n = c.noise;
    n.horizon = r.number("horizon", n.horizon, positive, "positive");
    n.delta = r.number("delta", n.horizon / 64, positive, "positive");
    n.path_dt = r.number("path_dt", n.horizon / 4096, positive, "positive");
    if (n.delta > 0 && n.delta_level() < 0) r.fail("delta", "must be horizon * 2^-k for an integer k in [0, 26]");
    if (n.path_dt > 0 && n.path_level() < 0) r.fail("path_dt", "must be horizon * 2^-k for an integer k in [0, 26]");
    if (n.delta_level() >= 0 && n.path_level() >= 0 && n.path_level() < n.delta_level())
      r.fail("path_dt", "must not exceed delta");
    r.finish();
  }
  {
    auto r = root.child("hamiltonian");
    auto& h = c.hamiltonian;
    h.potential = r.function("potential", h.potential);
    h.noise_potential = r.function("noise_potential", h.noise_potential);
    h.eta = r.number("eta", h.eta);
    if (r.get("torus_period")) h.torus_period = r.number("torus_period", 1.0, positive, "positive");
    h.x0 = r.number("x0", h.x0);
    h.p0 = r.number("p0", h.p0);
    r.finish();
  }
  {
    auto r = root.child("flow");
    auto& f = c.flow;
    f.scheme = r.choice("scheme", f.scheme, {"wz", "strat"});
    f.strat_scheme = r.choice("strat_scheme", f.strat_scheme, {"heun", "avf"});
    f.substeps = static_cast<int>(r.integer("substeps", f.substeps, at_least(1), "at least 1"));
    f.stride = static_cast<int>(r.integer("stride", f.stride, at_least(1), "at least 1"));
    r.finish();
  }
  {
    auto r = root.child("grid");
    auto& g = c.grid;
    g.n = static_cast<int>(r.integer("n", g.n, [](auto n) { return n >= 8 && n % 2 == 0 && n <= (1 << 20); },
                                     "even and in [8, 2^20]"));
    g.period = r.number("period", g.period, positive, "positive");
    g.origin = r.number("origin", g.origin);
    r.finish();
  }
  {
    auto r = root.child("density");
    auto& d = c.density;
    d.rho0 = r.function("rho0", d.rho0);
    d.v0 = r.function("v0", d.v0);
    d.time = r.number("time", d.time, positive, "positive");
    d.method = r.choice("method", d.method, {"jacobian", "mc", "both"});
    d.particles = r.unsigned_integer("particles", d.particles);
    if (d.particles < 1000) r.fail("particles", "must be at least 1000");
    r.finish();
  }
  {
    auto r = root.child("vlasov");
    auto& v = c.vlasov;
    v.particles = r.unsigned_integer("particles", v.particles);
    if (v.particles < 1) r.fail("particles", "must be at least 1");
    v.p_mean = r.number("p_mean", v.p_mean);
    v.p_sd = r.number("p_sd", v.p_sd, [](double s) { return s >= 0.0; }, "nonnegative");
    v.replications = static_cast<int>(r.integer("replications", v.replications, at_least(2), "at least 2"));
    v.dt_level = static_cast<int>(r.integer("dt_level", v.dt_level, [](auto l) { return l >= 1 && l <= 20; }, "in [1, 20]"));
    v.sample_stride = static_cast<int>(r.integer("sample_stride", v.sample_stride, at_least(1), "at least 1"));
    v.control_variate = r.boolean("control_variate", v.control_variate);
    r.finish();
  }
  {
    auto r = root.child("nls");
    auto& s = c.nls;
    s.lambda = r.number("lambda", s.lambda);
    s.driver = r.choice("driver", s.driver, {"none", "wz", "strat", "white", "random"});
    s.modes = r.functions("modes", s.modes);
    s.u0_re = r.function("u0_re", s.u0_re);
    s.u0_im = r.function("u0_im", s.u0_im);
    s.dt = r.number("dt", s.dt, positive, "positive");
    s.stride = static_cast<int>(r.integer("stride", s.stride, at_least(1), "at least 1"));
    s.ou_rate = r.number("ou_rate", s.ou_rate, positive, "positive");
    s.ou_scale = r.number("ou_scale", s.ou_scale, positive, "positive");
    s.epsilon = r.number("epsilon", s.epsilon, positive, "positive");
    r.finish();
  }
  {
    auto r = root.child("bridge");
    auto& b = c.bridge;
    b.a = r.function("a", b.a);
    b.rho0 = r.function("rho0", b.rho0);
    b.phi0 = r.function("phi0", b.phi0);
    b.laplacian = r.choice("laplacian", b.laplacian, {"half", "full"});
    b.divergence_correction = r.boolean("divergence_correction", b.divergence_correction);
    b.dt = r.number("dt", b.dt, positive, "positive");
    b.stride = static_cast<int>(r.integer("stride", b.stride, at_least(1), "at least 1"));
    r.finish();
  }
  {
    auto r = root.child("converge");
    auto& v = c.converge;
    v.system = r.choice("system", v.system, {"phase_flow", "snls"});
    v.delta_levels = r.list<int>("delta_levels", v.delta_levels);
    bool increasing = v.delta_levels.size() >= 3;
    for (std::size_t i = 0; i < v.delta_levels.size(); ++i)
      increasing = increasing && v.delta_levels[i] >= 0 && (i == 0 || v.delta_levels[i] > v.delta_levels[i - 1]);
    if (!increasing) r.fail("delta_levels", "must hold at least 3 strictly increasing nonnegative levels");
    v.reference_level =
        static_cast<int>(r.integer("reference_level", v.reference_level, [](auto l) { return l >= 1 && l <= 24; }, "in [1, 24]"));
    if (increasing && v.system == "phase_flow" && v.reference_level <= v.delta_levels.back())
      r.fail("reference_level", "must exceed the finest delta level");
    v.reference_offset =
        static_cast<int>(r.integer("reference_offset", v.reference_offset, [](auto l) { return l >= 1 && l <= 8; }, "in [1, 8]"));
    v.substeps = static_cast<int>(r.integer("substeps", v.substeps, at_least(1), "at least 1"));
    v.replications = static_cast<int>(r.integer("replications", v.replications, at_least(1), "at least 1"));
    v.bootstrap_resamples = static_cast<int>(r.integer("bootstrap_resamples", v.bootstrap_resamples, at_least(10), "at least 10"));
    v.epsilons = r.list<double>("epsilons", v.epsilons);
    for (double e : v.epsilons)
      if (!(e > 0.0)) {
        r.fail("epsilons", "entries must be positive");
        break;
      }
    if (!v.epsilons.empty() && v.system != "phase_flow") r.fail("epsilons", "only supported for system phase_flow");
    if (!v.epsilons.empty() && v.replications < 100) r.fail("replications", "must be at least 100 with epsilons");
    r.finish();
  }
  root.finish();

  const bool delta_ok = c.noise.delta_level() >= 0;
  if (c.subcommand == "density" && c.density.time > c.noise.horizon)
    errors.push_back("density.time: must not exceed noise.horizon");
  const bool snls_study = c.subcommand == "converge" && c.converge.system == "snls";
  if ((c.subcommand == "nls" || snls_study) && (c.nls.driver == "wz" || c.nls.driver == "strat") &&
      c.nls.modes.empty())
    errors.push_back("nls.modes: required for this driver");
  if (c.subcommand == "nls" && c.nls.dt > 0) {
    if (!integral_ratio(c.noise.horizon, c.nls.dt)) errors.push_back("nls.dt: must divide noise.horizon");
    else if (c.nls.driver == "wz" && delta_ok && !integral_ratio(c.noise.delta, c.nls.dt))
      errors.push_back("nls.dt: must divide noise.delta for the wz driver");
  }
  if (c.subcommand == "bridge" && c.bridge.dt > 0) {
    if (!integral_ratio(c.noise.horizon, c.bridge.dt)) errors.push_back("bridge.dt: must divide noise.horizon");
    else if (!c.bridge.a.is_zero() && delta_ok && !integral_ratio(c.noise.delta, c.bridge.dt))
      errors.push_back("bridge.dt: must divide noise.delta when the coupling a is nonzero");
  }
  if (!errors.empty()) throw SchemaError(std::move(errors));
  return c;
}

RunConfig parse_config_text(const std::string& text, const Overrides& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError("malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                         e.what(),
                     line, column);
  }
  return parse_config(doc, overrides);
}

RunConfig parse_config_file(const std::filesystem::path& file, const Overrides& overrides) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + file.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config_text(s.str(), overrides);
}

json to_json(const RunConfig& c) {
  json modes = json::array();
  for (const auto& m : c.nls.modes) modes.push_back(function_json(m));
  return {
      {"subcommand", c.subcommand},
      {"seed", c.seed},
      {"workers", c.workers},
      {"out", c.out},
      {"noise", {{"horizon", c.noise.horizon}, {"delta", c.noise.delta}, {"path_dt", c.noise.path_dt}}},
      {"hamiltonian",
       {{"potential", function_json(c.hamiltonian.potential)},
        {"noise_potential", function_json(c.hamiltonian.noise_potential)},
        {"eta", c.hamiltonian.eta},
        {"torus_period", c.hamiltonian.torus_period ? json(*c.hamiltonian.torus_period) : json(nullptr)},
        {"x0", c.hamiltonian.x0},
        {"p0", c.hamiltonian.p0}}},
      {"flow",
       {{"scheme", c.flow.scheme},
        {"strat_scheme", c.flow.strat_scheme},
        {"substeps", c.flow.substeps},
        {"stride", c.flow.stride}}},
      {"grid", {{"n", c.grid.n}, {"period", c.grid.period}, {"origin", c.grid.origin}}},
      {"density",
       {{"rho0", function_json(c.density.rho0)},
        {"v0", function_json(c.density.v0)},
        {"time", c.density.time},
        {"method", c.density.method},
        {"particles", c.density.particles}}},
      {"vlasov",
       {{"particles", c.vlasov.particles},
        {"p_mean", c.vlasov.p_mean},
        {"p_sd", c.vlasov.p_sd},
        {"replications", c.vlasov.replications},
        {"dt_level", c.vlasov.dt_level},
        {"sample_stride", c.vlasov.sample_stride},
        {"control_variate", c.vlasov.control_variate}}},
      {"nls",
       {{"lambda", c.nls.lambda},
        {"driver", c.nls.driver},
        {"modes", modes},
        {"u0_re", function_json(c.nls.u0_re)},
        {"u0_im", function_json(c.nls.u0_im)},
        {"dt", c.nls.dt},
        {"stride", c.nls.stride},
        {"ou_rate", c.nls.ou_rate},
        {"ou_scale", c.nls.ou_scale},
        {"epsilon", c.nls.epsilon}}},
      {"bridge",
       {{"a", function_json(c.bridge.a)},
        {"rho0", function_json(c.bridge.rho0)},
        {"phi0", function_json(c.bridge.phi0)},
        {"laplacian", c.bridge.laplacian},
        {"divergence_correction", c.bridge.divergence_correction},
        {"dt", c.bridge.dt},
        {"stride", c.bridge.stride}}},
      {"converge",
       {{"system", c.converge.system},
        {"delta_levels", c.converge.delta_levels},
        {"reference_level", c.converge.reference_level},
        {"reference_offset", c.converge.reference_offset},
        {"substeps", c.converge.substeps},
        {"replications", c.converge.replications},
        {"bootstrap_resamples", c.converge.bootstrap_resamples},
        {"epsilons", c.converge.epsilons}}},
  };
}

std::filesystem::path output_directory(const RunConfig& config) {
  if (!config.out.empty()) return config.out;
  auto j = to_json(config);
  j.erase("out");
  const char* env = std::getenv(kOutputRootEnv);
  const std::filesystem::path root = env && *env ? env : "runs";
  return root / (config.subcommand + "-" + config_hash(j).substr(0, 12));
}

namespace {

HamiltonianSpec hamiltonian(const RunConfig& c) {
  const auto f = c.hamiltonian.potential, s = c.hamiltonian.noise_potential;
  HamiltonianSpec h;
  h.potential = ScalarPotential::separable([f](double x) { return f.value(x); }, [f](double x) { return f.d1(x); },
                                           [f](double x) { return f.d2(x); });
  h.noise_potential = ScalarPotential::separable([s](double x) { return s.value(x); },
                                                 [s](double x) { return s.d1(x); },
                                                 [s](double x) { return s.d2(x); });
  h.eta = c.hamiltonian.eta;
  if (c.hamiltonian.torus_period) h.domain = Domain::flat_torus(Vec::Constant(1, *c.hamiltonian.torus_period));
  return h;
}

GridSpec grid(const RunConfig& c) {
  GridSpec g;
  g.n = c.grid.n;
  g.period = c.grid.period;
  g.origin = c.grid.origin;
  return g;
}

std::function<double(double)> fn(const Function1D& f) {
  return [f](double x) { return f.value(x); };
}

/// Output writer that records every artifact in the run record.
class Run {
 public:
  Run(const RunConfig& config, std::ostream& log, bool quiet)
      : config_(config), log_(log), quiet_(quiet), dir_(output_directory(config)) {
    record_.config = to_json(config);
    record_.config_hash = config_hash(record_.config);
    record_.version = std::string(version());
    record_.seeds.push_back(config.seed);
  }

  const std::filesystem::path& dir() const { return dir_; }
  RunRecord& record() { return record_; }

  std::uint64_t seed(std::uint64_t index) {
    const auto s = derive_seed(config_.seed, index);
    record_.seeds.push_back(s);
    return s;
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body, bool binary = false) {
    std::ofstream out(dir_ / name, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IoError("cannot write " + (dir_ / name).string());
    out << std::setprecision(17);
    body(out);
    out.close();
    if (!out) throw IoError("write failed for " + (dir_ / name).string());
    record_.add_artifact(dir_, name);
  }

  void note(const std::string& line) {
    if (!quiet_) log_ << line << "\n";
  }

  json summary = json::object();

 private:
  const RunConfig& config_;
  std::ostream& log_;
  bool quiet_;
  std::filesystem::path dir_;
  RunRecord record_;
};

void run_flow_command(const RunConfig& c, Run& run, std::string& stage) {
  stage = "brownian_path";
  const auto path = std::make_shared<const BrownianPath>(
      sample_brownian(run.seed(0), c.noise.horizon, c.noise.path_level()));
  const auto spec = hamiltonian(c);
  const PhaseState s0{Vec::Constant(1, c.hamiltonian.x0), Vec::Constant(1, c.hamiltonian.p0), 0.0};
  FlowOptions opt;
  opt.record_stride = c.flow.stride;
  opt.scheme = c.flow.strat_scheme == "avf" ? StratScheme::kAvf : StratScheme::kHeun;
  FlowDriver driver = c.flow.scheme == "wz"
                          ? FlowDriver(WzDriver{WongZakaiMesh(path, c.noise.delta_level()), c.flow.substeps})
                          : FlowDriver(StratDriver{path, c.noise.path_level()});
  stage = c.flow.scheme == "wz" ? "wz_flow" : "strat_flow";
  const auto r = run_flow(spec, s0, driver, opt);
  run.write("trajectory.csv", [&](std::ostream& o) { write_trajectory_csv(r, o); });
  run.write("trajectory.bin", [&](std::ostream& o) { write_trajectory_binary(r, o); }, true);
  run.write("path.csv", [&](std::ostream& o) { write_path_csv(*path, o); });
  const double h0 = r.h0.front(), h1 = r.h1.front();
  run.summary["samples"] = r.times.size();
  run.summary["final_time"] = r.times.back();
  run.summary["h0_relative_drift"] = h0 != 0.0 ? std::abs(r.h0.back() - h0) / std::abs(h0) : std::abs(r.h0.back());
  run.summary["h1_relative_drift"] = h1 != 0.0 ? std::abs(r.h1.back() - h1) / std::abs(h1) : std::abs(r.h1.back());
  if (!r.completed()) {
    run.summary["stopped_at"] = r.status.time;
    throw EvaluationError("trajectory became non-finite at t = " + std::to_string(r.status.time));
  }
}

void run_density_command(const RunConfig& c, Run& run, std::string& stage) {
  stage = "setup";
  const auto g = grid(c);
  const auto f = c.density.rho0;
  double raw_mass = 0.0;
  for (double x : g.axis_nodes()) {
    const double v = f.value(x);
    if (!(v >= 0.0)) throw ConfigError("density.rho0 is negative at x = " + std::to_string(x));
    raw_mass += v * g.spacing();
  }
  if (!(raw_mass > 0.0)) throw ConfigError("density.rho0 has zero mass on the grid");
  const auto rho0 = density_from(g, fn(f));
  const auto v = c.density.v0;
  InitialVelocity v0{[v](const Vec& x, Eigen::Ref<Vec> out) { out(0) = v.value(x(0)); },
                     [v](const Vec& x, Eigen::Ref<Mat> out) { out(0, 0) = v.d1(x(0)); }};
  const auto spec = hamiltonian(c);
  stage = "brownian_path";
  const auto path = std::make_shared<const BrownianPath>(
      sample_brownian(run.seed(0), c.noise.horizon, c.noise.path_level()));
  FlowDriver driver = c.flow.scheme == "wz"
                          ? FlowDriver(WzDriver{WongZakaiMesh(path, c.noise.delta_level()), c.flow.substeps})
                          : FlowDriver(StratDriver{path, c.noise.path_level()});

  std::optional<PushforwardResult> jac;
  std::optional<MonteCarloDensity> mc;
  if (c.density.method != "mc") {
    stage = "pushforward_jacobian";
    PushforwardOptions opt;
    opt.workers = c.workers;
    opt.rho0_function = [f, raw_mass](double x) { return f.value(x) / raw_mass; };
    jac = pushforward_jacobian(spec, rho0, v0, driver, c.density.time, opt);
    run.summary["renormalization"] = jac->renormalization;
  }
  if (c.density.method != "jacobian") {
    stage = "pushforward_mc";
    MonteCarloOptions opt;
    opt.workers = c.workers;
    mc = pushforward_mc(spec, rho0, v0, driver, c.density.time, c.density.particles, run.seed(1), opt);
    run.summary["mc_l1_standard_error"] = mc->l1_standard_error;
    run.summary["mc_outside"] = mc->outside;
  }
  if (jac && mc) {
    const double d = l1_distance(g, jac->density.values, mc->density.values);
    run.summary["l1_jacobian_vs_mc"] = d;
    run.summary["l1_in_standard_errors"] = d / mc->l1_standard_error;
  }
  stage = "output";
  run.write("density.csv", [&](std::ostream& o) {
    o << "x,rho0" << (jac ? ",rho_jacobian,preimage" : "") << (mc ? ",rho_mc,mc_se" : "") << "\n";
    const auto xs = g.axis_nodes();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      o << xs[i] << "," << rho0.values[i];
      if (jac) o << "," << jac->density.values[i] << "," << jac->preimages[i];
      if (mc) o << "," << mc->density.values[i] << "," << mc->standard_error[i];
      o << "\n";
    }
  });
}

void run_vlasov_command(const RunConfig& c, Run& run, std::string& stage) {
  stage = "ensemble";
  const auto spec = hamiltonian(c);
  const auto e0 = sample_ensemble(c.vlasov.particles, c.grid.period, c.vlasov.p_mean, c.vlasov.p_sd, run.seed(2));
  const auto battery = default_battery(c.grid.period);
  SecondOrderOptions opt;
  opt.replications = c.vlasov.replications;
  opt.dt_level = c.vlasov.dt_level;
  opt.sample_stride = c.vlasov.sample_stride;
  opt.horizon = c.noise.horizon;
  opt.seed = c.seed;
  opt.workers = c.workers;
  opt.control_variate = c.vlasov.control_variate;
  stage = "weak_residual_second_order";
  const auto t = weak_residual_second_order(spec, e0, battery, opt);
  stage = "output";
  run.write("residual.csv", [&](std::ostream& o) { write_residual_csv(t, battery, o); });
  run.write("aggregate.csv", [&](std::ostream& o) {
    o << "phi,residual,ci_low,ci_high,ablated,ablated_ci_low,ablated_ci_high\n";
    for (const auto& a : t.aggregate)
      o << battery[a.phi].name() << "," << a.residual << "," << a.ci_low << "," << a.ci_high << "," << a.ablated
        << "," << a.ablated_ci_low << "," << a.ablated_ci_high << "\n";
  });
  std::size_t covering = 0, ablated_excluding = 0;
  for (const auto& a : t.aggregate) {
    covering += a.ci_low <= 0.0 && a.ci_high >= 0.0;
    ablated_excluding += a.ablated_ci_low > 0.0 || a.ablated_ci_high < 0.0;
  }
  run.summary["test_functions"] = t.aggregate.size();
  run.summary["ci_covering_zero"] = covering;
  run.summary["ablated_ci_excluding_zero"] = ablated_excluding;
}

NlsSpec nls_spec(const RunConfig& c, Run& run, const std::string& driver) {
  NlsSpec s;
  s.grid = grid(c);
  s.lambda = c.nls.lambda;
  if (driver == "wz" || driver == "strat") {
    s.driver = driver == "wz" ? NlsDriver::kWzPotential : NlsDriver::kStratPotential;
    for (const auto& m : c.nls.modes) s.field.modes.push_back({fn(m), [m](double x) { return m.d1(x); }});
    s.field.paths = std::make_shared<const BrownianPath>(sample_brownian(
        run.seed(0), c.noise.horizon, c.noise.path_level(), static_cast<int>(c.nls.modes.size())));
    s.delta_level = c.noise.delta_level();
  } else if (driver == "white") {
    s.driver = NlsDriver::kWhiteDispersion;
    s.dispersion_path =
        std::make_shared<const BrownianPath>(sample_brownian(run.seed(0), c.noise.horizon, c.noise.path_level()));
  } else if (driver == "random") {
    s.driver = NlsDriver::kRandomDispersion;
    s.dispersion = std::make_shared<const DispersionDriver>(c.nls.ou_rate, c.nls.ou_scale, c.nls.epsilon,
                                                            c.noise.horizon, c.noise.path_dt, run.seed(3));
  }
  return s;
}

WaveField nls_initial(const RunConfig& c) {
  const auto re = c.nls.u0_re, im = c.nls.u0_im;
  return wave_from(grid(c), [re, im](double x) { return cplx(re.value(x), im.value(x)); });
}

void run_nls_command(const RunConfig& c, Run& run, std::string& stage) {
  stage = "setup";
  const auto spec = nls_spec(c, run, c.nls.driver);
  const auto u0 = nls_initial(c);
  stage = "nls_evolve";
  const auto s = nls_evolve(spec, u0, c.noise.horizon, c.nls.dt, c.nls.stride);
  stage = "output";
  run.write("series.csv", [&](std::ostream& o) {
    o << "t,mass,energy\n";
    for (std::size_t i = 0; i < s.times.size(); ++i) o << s.times[i] << "," << s.mass[i] << "," << s.energy[i] << "\n";
  });
  run.write("wave_final.csv", [&](std::ostream& o) { write_wave_csv(s.waves.back(), o); });
  run.write("wave_final.bin", [&](std::ostream& o) { write_wave_binary(s.waves.back(), o); }, true);
  double drift = 0.0;
  for (double m : s.mass) drift = std::max(drift, std::abs(m - s.mass.front()) / s.mass.front());
  run.summary["max_relative_mass_drift"] = drift;
  run.summary["energy_final"] = s.energy.back();
  if (c.nls.driver == "none" || c.nls.driver == "wz" || c.nls.driver == "random") {
    stage = "madelung_residual";
    try {
      const auto r = madelung_residual(spec, s.waves, 0.0, c.nls.dt * c.nls.stride);
      run.write("madelung.csv", [&](std::ostream& o) {
        o << "t,continuity,phase\n";
        for (std::size_t i = 0; i < r.times.size(); ++i)
          o << r.times[i] << "," << r.continuity[i] << "," << r.phase[i] << "\n";
      });
      run.summary["madelung_evaluated"] = r.times.size();
      run.summary["madelung_skipped"] = r.skipped.size();
      run.summary["madelung_sup_continuity"] = r.sup_continuity;
      run.summary["madelung_sup_phase"] = r.sup_phase;
    } catch (const SupportError& e) {
      run.summary["madelung_unavailable"] = e.what();
    }
  }
}

void run_bridge_command(const RunConfig& c, Run& run, std::string& stage) {
  stage = "setup";
  BridgeSpec s;
  s.grid = grid(c);
  s.nu = c.bridge.laplacian == "full" ? 1.0 : 0.5;
  s.divergence_correction = c.bridge.divergence_correction;
  s.rho0 = density_from(s.grid, fn(c.bridge.rho0));
  s.phi0 = PotentialField{s.grid, {}};
  for (double x : s.grid.axis_nodes()) s.phi0.values.push_back(c.bridge.phi0.value(x));
  s.phi0.project_zero_mean();
  if (!c.bridge.a.is_zero()) {
    const auto a = c.bridge.a;
    s.a = fn(a);
    s.da = [a](double x) { return a.d1(x); };
    s.mesh = WongZakaiMesh(
        std::make_shared<const BrownianPath>(sample_brownian(run.seed(0), c.noise.horizon, c.noise.path_level())),
        c.noise.delta_level());
  }
  run.summary["growth_bound"] = bridge_growth_bound(s, c.noise.horizon);
  stage = "bridge_flow";
  const auto r = bridge_flow(s, c.noise.horizon, c.bridge.dt, c.bridge.stride);
  stage = "fb_residual";
  const auto res = fb_residual(s, r.states, 0.0, c.bridge.dt * c.bridge.stride);
  stage = "output";
  run.write("bridge.csv", [&](std::ostream& o) { write_bridge_csv(r, s.nu, o); });
  run.write("residual.csv", [&](std::ostream& o) {
    o << "t,forward,backward\n";
    for (std::size_t i = 0; i < res.times.size(); ++i)
      o << res.times[i] << "," << res.forward[i] << "," << res.backward[i] << "\n";
  });
  run.summary["max_mass_drift"] = r.max_mass_drift;
  run.summary["clipped_mass"] = r.clipped_mass;
  run.summary["hamiltonian_final"] = r.hamiltonian.back();
  run.summary["sup_forward_residual"] = res.sup_forward;
  run.summary["sup_backward_residual"] = res.sup_backward;
}

void write_report(Run& run, const ConvergenceReport& r) {
  run.write("convergence.csv", [&](std::ostream& o) { write_convergence_csv(r, o); });
  run.write("per_path.csv", [&](std::ostream& o) { write_per_path_csv(r, o); });
  run.write("report.json", [&](std::ostream& o) { o << to_json(r).dump(2) << "\n"; });
  run.summary["degenerate"] = r.degenerate;
  if (r.fit) {
    run.summary["slope"] = r.fit->slope;
    run.summary["slope_stderr"] = r.fit->stderr_slope;
  }
  run.summary["strictly_decreasing"] = r.strictly_decreasing();
}

void run_converge_command(const RunConfig& c, Run& run, std::string& stage) {
  const auto& v = c.converge;
  if (v.system == "phase_flow") {
    PhaseFlowStudy s;
    s.spec = hamiltonian(c);
    s.initial = {Vec::Constant(1, c.hamiltonian.x0), Vec::Constant(1, c.hamiltonian.p0), 0.0};
    s.delta_levels = v.delta_levels;
    s.reference_level = v.reference_level;
    s.horizon = c.noise.horizon;
    s.replications = static_cast<std::size_t>(v.replications);
    s.seed = c.seed;
    s.workers = c.workers;
    s.bootstrap_resamples = v.bootstrap_resamples;
    s.scheme = c.flow.strat_scheme == "avf" ? StratScheme::kAvf : StratScheme::kHeun;
    stage = "strong_convergence_study";
    const auto r = strong_convergence_study(s);
    stage = "output";
    write_report(run, r);
    if (!v.epsilons.empty()) {
      stage = "probability_convergence_study";
      const auto t = probability_table(r, v.epsilons);
      stage = "output";
      run.write("probability.csv", [&](std::ostream& o) { write_probability_csv(t, o); });
      run.summary["probability_nonincreasing_within_ci"] = t.nonincreasing_within_ci();
    }
  } else {
    stage = "setup";
    const auto spec = nls_spec(c, run, "wz");
    NlsStudyOptions o;
    o.delta_levels = v.delta_levels;
    o.reference_offset = v.reference_offset;
    o.substeps = v.substeps;
    o.horizon = c.noise.horizon;
    o.replications = static_cast<std::size_t>(v.replications);
    o.seed = c.seed;
    o.workers = c.workers;
    o.bootstrap_resamples = v.bootstrap_resamples;
    stage = "strong_convergence_study";
    const auto r = strong_convergence_study(spec, nls_initial(c), o);
    stage = "output";
    write_report(run, r);
  }
}

}  // namespace

int run(const RunConfig& config, std::ostream& log, bool quiet) {
  Run r(config, log, quiet);
  const auto start = std::chrono::steady_clock::now();
  std::string stage = "setup";
  int code = 0;
  try {
    std::error_code ec;
    std::filesystem::create_directories(r.dir(), ec);
    if (ec) throw IoError("cannot create output directory " + r.dir().string() + ": " + ec.message());
    r.write("effective_config.json", [&](std::ostream& o) { o << to_json(config).dump(2) << "\n"; });
    if (config.subcommand == "flow") run_flow_command(config, r, stage);
    else if (config.subcommand == "density") run_density_command(config, r, stage);
    else if (config.subcommand == "vlasov") run_vlasov_command(config, r, stage);
    else if (config.subcommand == "nls") run_nls_command(config, r, stage);
    else if (config.subcommand == "bridge") run_bridge_command(config, r, stage);
    else if (config.subcommand == "converge") run_converge_command(config, r, stage);
    else throw ConfigError("unknown subcommand \"" + config.subcommand + "\"");
  } catch (const StabilityError& e) {
    r.record().status = "failed";
    r.record().failed_stage = stage;
    r.record().message = std::string(e.what()) + " (suggested dt " + std::to_string(e.suggested_dt()) + ")";
    code = 1;
  } catch (const ConfigError& e) {
    r.record().status = "failed";
    r.record().failed_stage = stage;
    r.record().message = e.what();
    code = 2;
  } catch (const std::exception& e) {
    r.record().status = "failed";
    r.record().failed_stage = stage;
    r.record().message = e.what();
    code = 1;
  }
  try {
    if (!r.summary.empty())
      r.write("summary.json", [&](std::ostream& o) { o << r.summary.dump(2) << "\n"; });
  } catch (const std::exception& e) {
    if (code == 0) {
      r.record().status = "failed";
      r.record().failed_stage = "output";
      r.record().message = e.what();
      code = 1;
    }
  }
  r.record().wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  try {
    write_manifest(r.record(), r.dir());
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
  if (code != 0) {
    log << "error in stage " << r.record().failed_stage << ": " << r.record().message << "\n";
  } else if (!quiet) {
    for (auto it = r.summary.begin(); it != r.summary.end(); ++it) log << it.key() << " = " << it.value().dump() << "\n";
  }
  r.note("output: " + r.dir().string());
  return code;
}

}  // namespace swhf::cli
