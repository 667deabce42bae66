#pragma once

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ppw/error.hpp"

namespace ppw::cli {

struct GridSpec {
  int dim = 2;
  int n = 16;
  bool operator==(const GridSpec&) const = default;
};

struct IntervalSpec {
  double start = 0.0;
  double end = 1.0;
  int samples = 101;
  bool operator==(const IntervalSpec&) const = default;
};

/// Named curve generator. Only the fields of the selected generator are used.
struct CurveSpec {
  std::string generator = "constant";
  std::vector<double> metric;  // constant: d*d row-major entries, identity if empty
  std::vector<double> rates;   // diagonal-exponential: g = diag(exp(r_i s))
  double epsilon = 0.0;        // periodic-diagonal
  double period = 0.0;
  std::vector<CurveSpec> base;  // pullback: exactly one entry
  std::string field;            // pullback: gradient-sine | shear | translation
  double amplitude = 0.0;
  bool operator==(const CurveSpec&) const = default;
};

struct FourierMode {
  std::vector<int> k;
  double cos = 0.0;
  double sin = 0.0;
  bool operator==(const FourierMode&) const = default;
};

/// rho(x) = value + sum over modes of cos * cos(2 pi k.x) + sin * sin(2 pi k.x).
struct RhoSpec {
  std::string kind = "constant";  // constant | fourier-modes
  double value = 0.0;
  std::vector<FourierMode> modes;
  bool operator==(const RhoSpec&) const = default;
};

struct LambdaSpec {
  double s_star = 0.0;
  double value = 1.0;
  double rate = 0.0;
  bool operator==(const LambdaSpec&) const = default;
};

struct CheckSpec {
  std::string name;
  double tolerance = 0.0;
  bool operator==(const CheckSpec&) const = default;
};

struct OutputSpec {
  std::string report;
  std::string csv;
  std::string snapshots;
  bool operator==(const OutputSpec&) const = default;
};

struct Scenario {
  std::string name;
  GridSpec grid;
  IntervalSpec s;
  CurveSpec curve;
  RhoSpec rho;
  LambdaSpec lambda;
  std::vector<CheckSpec> checks;
  OutputSpec outputs;
  bool operator==(const Scenario&) const = default;
};

struct ScenarioError {
  std::string path;  // dotted key path, e.g. curve.rates
  int line = 0;      // 1-based; 0 when unknown
  int column = 0;
  std::string message;

  std::string str() const {
    std::ostringstream os;
    if (line > 0) os << line << ":" << column << ": ";
    if (!path.empty()) os << path << ": ";
    os << message;
    return os.str();
  }
};

struct ParseResult {
  std::optional<Scenario> scenario;
  std::vector<ScenarioError> errors;
  bool ok() const { return scenario.has_value(); }
};

/// Registered check names with the stage that produces them and a short
/// identifier of the identity being verified.
struct CheckInfo {
  const char* name;
  const char* verb;
  Stage stage;
  const char* anchor;
};

inline const std::vector<CheckInfo>& check_catalog() {
  static const std::vector<CheckInfo> cat{
      {"gauge-divergence", "run", Stage::gauge, "divergence-free-leaf-rate"},
      {"gauge-trace", "run", Stage::gauge, "trace-free-leaf-rate"},
      {"leaf-volume", "run", Stage::assemble, "leaf-volume-root-equals-scale"},
      {"lapse-solvability", "run", Stage::assemble, "lapse-source-mean-zero"},
      {"energy-condition", "run", Stage::assemble, "nonnegative-null-energy"},
      {"rho-target", "run", Stage::assemble, "prescribed-null-ricci"},
      {"ricci-blocks", "run", Stage::oracle, "closed-form-ricci-blocks"},
      {"ricci-null-blocks", "run", Stage::oracle, "null-direction-ricci-vanishes"},
      {"null-ricci", "run", Stage::oracle, "ricci-equals-rho-ds2"},
      {"curvature-vanishing", "run", Stage::oracle, "curvature-on-null-orthogonal-triples"},
      {"traced-curvature", "run", Stage::oracle, "traced-curvature-identity"},
      {"roundtrip", "run", Stage::moduli, "moduli-roundtrip"},
      {"ode-comparison", "check-ode", Stage::scale, "sturm-comparison-zero-spacing"},
      {"ode-wronskian", "check-ode", Stage::scale, "wronskian-constancy"},
      {"ode-invariance", "check-ode", Stage::scale, "scale-data-diffeo-invariance"},
      {"spinor-parallel", "spinor", Stage::spinor, "parallel-transported-spinor"},
      {"spinor-constraint", "spinor", Stage::spinor, "constrained-spinor-subspace"},
      {"spinor-null-current", "spinor", Stage::spinor, "lightlike-dirac-current"},
      {"spinor-lichnerowicz", "spinor", Stage::spinor, "leafwise-lichnerowicz"},
      {"rigidity-periodicity", "rigidity", Stage::rigidity, "periodic-curve-closes"},
  };
  return cat;
}

inline const CheckInfo* find_check(const std::string& name) {
  for (const auto& c : check_catalog())
    if (name == c.name) return &c;
  return nullptr;
}

namespace detail {

class Reader {
 public:
  std::vector<ScenarioError> errors;

  void error(const YAML::Node& n, const std::string& path, const std::string& msg) {
    ScenarioError e{path, 0, 0, msg};
    if (n.IsDefined()) {
      const YAML::Mark m = n.Mark();
      if (m.line >= 0) {
        e.line = m.line + 1;
        e.column = m.column + 1;
      }
    }
    errors.push_back(std::move(e));
  }

  /// Reports keys of a mapping that are not in `allowed`.
  bool mapping(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed) {
    if (!n.IsMap()) {
      error(n, path, "expected a mapping");
      return false;
    }
    for (const auto& kv : n) {
      const std::string key = kv.first.Scalar();
      if (!allowed.count(key)) error(kv.first, join(path, key), "unknown key '" + key + "'");
    }
    return true;
  }

  template <class T>
  void get(const YAML::Node& parent, const std::string& path, const char* key, T& out, bool required) {
    const YAML::Node n = parent[key];
    if (!n) {
      if (required) error(parent, join(path, key), "missing required field");
      return;
    }
    convert(n, join(path, key), out);
  }

  void convert(const YAML::Node& n, const std::string& path, double& out) {
    try {
      if (!n.IsScalar()) throw YAML::Exception(n.Mark(), "");
      out = n.as<double>();
      if (!std::isfinite(out)) error(n, path, "expected a finite number");
    } catch (const YAML::Exception&) {
      error(n, path, "expected a number");
    }
  }
  void convert(const YAML::Node& n, const std::string& path, int& out) {
    try {
      if (!n.IsScalar()) throw YAML::Exception(n.Mark(), "");
      out = n.as<int>();
    } catch (const YAML::Exception&) {
      error(n, path, "expected an integer");
    }
  }
  void convert(const YAML::Node& n, const std::string& path, std::string& out) {
    if (!n.IsScalar()) {
      error(n, path, "expected a string");
      return;
    }
    out = n.Scalar();
  }
  template <class T>
  void convert(const YAML::Node& n, const std::string& path, std::vector<T>& out) {
    if (!n.IsSequence()) {
      error(n, path, "expected a list");
      return;
    }
    out.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      T v{};
      convert(n[i], path + "[" + std::to_string(i) + "]", v);
      out.push_back(v);
    }
  }

  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
};

inline void read_curve(Reader& r, const YAML::Node& n, const std::string& path, CurveSpec& c, int depth) {
  if (!r.mapping(n, path, {"generator", "metric", "rates", "epsilon", "period", "base", "field", "amplitude"})) return;
  r.get(n, path, "generator", c.generator, true);
  const YAML::Node gen = n["generator"];
  auto forbid = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys)
      if (n[k]) r.error(n[k], Reader::join(path, k), "not used by generator '" + c.generator + "'");
  };
  if (c.generator == "constant") {
    r.get(n, path, "metric", c.metric, false);
    forbid({"rates", "epsilon", "period", "base", "field", "amplitude"});
  } else if (c.generator == "diagonal-exponential") {
    r.get(n, path, "rates", c.rates, true);
    forbid({"metric", "epsilon", "period", "base", "field", "amplitude"});
  } else if (c.generator == "periodic-diagonal") {
    r.get(n, path, "epsilon", c.epsilon, true);
    r.get(n, path, "period", c.period, true);
    if (n["period"] && !(c.period > 0)) r.error(n["period"], Reader::join(path, "period"), "period must be positive");
    forbid({"metric", "rates", "base", "field", "amplitude"});
  } else if (c.generator == "pullback") {
    r.get(n, path, "field", c.field, true);
    r.get(n, path, "amplitude", c.amplitude, true);
    if (n["field"] && c.field != "gradient-sine" && c.field != "shear" && c.field != "translation")
      r.error(n["field"], Reader::join(path, "field"), "unknown generator field '" + c.field + "'");
    const YAML::Node b = n["base"];
    if (!b) {
      r.error(n, Reader::join(path, "base"), "missing required field");
    } else if (depth > 4) {
      r.error(b, Reader::join(path, "base"), "pullbacks nest too deeply");
    } else {
      c.base.assign(1, CurveSpec{});
      read_curve(r, b, Reader::join(path, "base"), c.base[0], depth + 1);
    }
    forbid({"metric", "rates", "epsilon", "period"});
  } else if (gen) {
    r.error(gen, Reader::join(path, "generator"), "unknown generator '" + c.generator + "'");
  }
}

inline void read_rho(Reader& r, const YAML::Node& n, const std::string& path, RhoSpec& rho) {
  if (!r.mapping(n, path, {"kind", "value", "modes"})) return;
  r.get(n, path, "kind", rho.kind, true);
  r.get(n, path, "value", rho.value, false);
  if (rho.kind == "constant") {
    if (n["modes"]) r.error(n["modes"], Reader::join(path, "modes"), "not used by kind 'constant'");
  } else if (rho.kind == "fourier-modes") {
    const YAML::Node modes = n["modes"];
    if (!modes) {
      r.error(n, Reader::join(path, "modes"), "missing required field");
    } else if (!modes.IsSequence()) {
      r.error(modes, Reader::join(path, "modes"), "expected a list");
    } else {
      for (std::size_t i = 0; i < modes.size(); ++i) {
        const std::string mp = Reader::join(path, "modes") + "[" + std::to_string(i) + "]";
        FourierMode m;
        if (r.mapping(modes[i], mp, {"k", "cos", "sin"})) {
          r.get(modes[i], mp, "k", m.k, true);
          r.get(modes[i], mp, "cos", m.cos, false);
          r.get(modes[i], mp, "sin", m.sin, false);
        }
        rho.modes.push_back(m);
      }
    }
  } else if (n["kind"]) {
    r.error(n["kind"], Reader::join(path, "kind"), "unknown rho kind '" + rho.kind + "'");
  }
}

inline void check_dims(Reader& r, const YAML::Node& n, const std::string& path, const CurveSpec& c, int d) {
  if (!n.IsDefined() || !n.IsMap()) return;
  if (c.generator == "constant" && !c.metric.empty() && c.metric.size() != static_cast<std::size_t>(d * d))
    r.error(n["metric"], Reader::join(path, "metric"), "expected " + std::to_string(d * d) + " entries");
  if (c.generator == "diagonal-exponential" && n["rates"] && c.rates.size() != static_cast<std::size_t>(d))
    r.error(n["rates"], Reader::join(path, "rates"), "expected " + std::to_string(d) + " rates");
  if (c.generator == "periodic-diagonal" && d < 2) r.error(n, path, "periodic-diagonal needs dimension at least 2");
  if (c.generator == "pullback" && (c.field == "gradient-sine" || c.field == "shear") && d < 2)
    r.error(n["field"], Reader::join(path, "field"), "field needs dimension at least 2");
  if (!c.base.empty()) check_dims(r, n["base"], Reader::join(path, "base"), c.base[0], d);
}

}  // namespace detail

/// Parses and validates a scenario. All problems are collected.
inline ParseResult parse_scenario(const std::string& text) {
  ParseResult out;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    out.errors.push_back({"", e.mark.line + 1, e.mark.column + 1, e.msg});
    return out;
  }
  detail::Reader r;
  Scenario sc;
  if (!r.mapping(root, "", {"name", "grid", "s", "curve", "rho", "lambda", "checks", "outputs"})) {
    out.errors = std::move(r.errors);
    return out;
  }
  r.get(root, "", "name", sc.name, true);

  if (const YAML::Node g = root["grid"]; !g) {
    r.error(root, "grid", "missing required field");
  } else if (r.mapping(g, "grid", {"dim", "n"})) {
    r.get(g, "grid", "dim", sc.grid.dim, true);
    r.get(g, "grid", "n", sc.grid.n, true);
    if (g["dim"] && (sc.grid.dim < 1 || sc.grid.dim > 3)) r.error(g["dim"], "grid.dim", "dimension must be 1, 2 or 3");
    if (g["n"] && (sc.grid.n < 8 || (sc.grid.n & (sc.grid.n - 1)) != 0))
      r.error(g["n"], "grid.n", "points per axis must be a power of two, at least 8");
  }

  if (const YAML::Node s = root["s"]; !s) {
    r.error(root, "s", "missing required field");
  } else if (r.mapping(s, "s", {"start", "end", "samples"})) {
    r.get(s, "s", "start", sc.s.start, true);
    r.get(s, "s", "end", sc.s.end, true);
    r.get(s, "s", "samples", sc.s.samples, true);
    if (s["end"] && !(sc.s.end > sc.s.start)) r.error(s["end"], "s.end", "interval end must exceed its start");
    if (s["samples"] && sc.s.samples < 9) r.error(s["samples"], "s.samples", "need at least 9 samples");
  }

  if (const YAML::Node c = root["curve"]; !c) {
    r.error(root, "curve", "missing required field");
  } else {
    detail::read_curve(r, c, "curve", sc.curve, 0);
    detail::check_dims(r, c, "curve", sc.curve, sc.grid.dim);
  }

  if (const YAML::Node rho = root["rho"]) {
    detail::read_rho(r, rho, "rho", sc.rho);
    for (std::size_t i = 0; i < sc.rho.modes.size(); ++i)
      if (sc.rho.modes[i].k.size() != static_cast<std::size_t>(sc.grid.dim))
        r.error(rho["modes"][i], "rho.modes[" + std::to_string(i) + "].k", "wave vector length must equal the dimension");
  }

  if (const YAML::Node l = root["lambda"]) {
    if (r.mapping(l, "lambda", {"s_star", "value", "rate"})) {
      r.get(l, "lambda", "s_star", sc.lambda.s_star, true);
      r.get(l, "lambda", "value", sc.lambda.value, true);
      r.get(l, "lambda", "rate", sc.lambda.rate, false);
      if (l["value"] && !(sc.lambda.value > 0)) r.error(l["value"], "lambda.value", "initial scale must be positive");
      if (l["s_star"] && root["s"] && (sc.lambda.s_star < sc.s.start || sc.lambda.s_star > sc.s.end))
        r.error(l["s_star"], "lambda.s_star", "initial point lies outside the s-interval");
    }
  }

  if (const YAML::Node cs = root["checks"]) {
    if (!cs.IsSequence()) {
      r.error(cs, "checks", "expected a list");
    } else {
      std::set<std::string> seen;
      for (std::size_t i = 0; i < cs.size(); ++i) {
        const std::string p = "checks[" + std::to_string(i) + "]";
        CheckSpec ck;
        if (r.mapping(cs[i], p, {"name", "tolerance"})) {
          r.get(cs[i], p, "name", ck.name, true);
          r.get(cs[i], p, "tolerance", ck.tolerance, true);
          if (cs[i]["name"] && !find_check(ck.name)) r.error(cs[i]["name"], p + ".name", "unknown check '" + ck.name + "'");
          if (cs[i]["name"] && !seen.insert(ck.name).second) r.error(cs[i]["name"], p + ".name", "duplicate check '" + ck.name + "'");
          if (cs[i]["tolerance"] && !(ck.tolerance > 0)) r.error(cs[i]["tolerance"], p + ".tolerance", "tolerance must be positive");
        }
        sc.checks.push_back(ck);
      }
    }
  }

  if (const YAML::Node o = root["outputs"]) {
    if (r.mapping(o, "outputs", {"report", "csv", "snapshots"})) {
      r.get(o, "outputs", "report", sc.outputs.report, false);
      r.get(o, "outputs", "csv", sc.outputs.csv, false);
      r.get(o, "outputs", "snapshots", sc.outputs.snapshots, false);
    }
  }

  out.errors = std::move(r.errors);
  if (out.errors.empty()) out.scenario = std::move(sc);
  return out;
}

namespace detail {

inline void emit_curve(YAML::Emitter& e, const CurveSpec& c) {
  e << YAML::BeginMap << YAML::Key << "generator" << YAML::Value << c.generator;
  if (c.generator == "constant" && !c.metric.empty()) e << YAML::Key << "metric" << YAML::Value << YAML::Flow << c.metric;
  if (c.generator == "diagonal-exponential") e << YAML::Key << "rates" << YAML::Value << YAML::Flow << c.rates;
  if (c.generator == "periodic-diagonal") {
    e << YAML::Key << "epsilon" << YAML::Value << c.epsilon;
    e << YAML::Key << "period" << YAML::Value << c.period;
  }
  if (c.generator == "pullback") {
    e << YAML::Key << "field" << YAML::Value << c.field;
    e << YAML::Key << "amplitude" << YAML::Value << c.amplitude;
    e << YAML::Key << "base" << YAML::Value;
    emit_curve(e, c.base.at(0));
  }
  e << YAML::EndMap;
}

}  // namespace detail

inline std::string serialize(const Scenario& sc) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << sc.name;
  e << YAML::Key << "grid" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "dim" << YAML::Value
    << sc.grid.dim << YAML::Key << "n" << YAML::Value << sc.grid.n << YAML::EndMap;
  e << YAML::Key << "s" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "start" << YAML::Value
    << sc.s.start << YAML::Key << "end" << YAML::Value << sc.s.end << YAML::Key << "samples" << YAML::Value
    << sc.s.samples << YAML::EndMap;
  e << YAML::Key << "curve" << YAML::Value;
  detail::emit_curve(e, sc.curve);
  e << YAML::Key << "rho" << YAML::Value << YAML::BeginMap << YAML::Key << "kind" << YAML::Value << sc.rho.kind
    << YAML::Key << "value" << YAML::Value << sc.rho.value;
  if (sc.rho.kind == "fourier-modes") {
    e << YAML::Key << "modes" << YAML::Value << YAML::BeginSeq;
    for (const auto& m : sc.rho.modes)
      e << YAML::Flow << YAML::BeginMap << YAML::Key << "k" << YAML::Value << YAML::Flow << m.k << YAML::Key << "cos"
        << YAML::Value << m.cos << YAML::Key << "sin" << YAML::Value << m.sin << YAML::EndMap;
    e << YAML::EndSeq;
  }
  e << YAML::EndMap;
  e << YAML::Key << "lambda" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "s_star" << YAML::Value
    << sc.lambda.s_star << YAML::Key << "value" << YAML::Value << sc.lambda.value << YAML::Key << "rate"
    << YAML::Value << sc.lambda.rate << YAML::EndMap;
  e << YAML::Key << "checks" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : sc.checks)
    e << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << c.name << YAML::Key << "tolerance"
      << YAML::Value << c.tolerance << YAML::EndMap;
  e << YAML::EndSeq;
  e << YAML::Key << "outputs" << YAML::Value << YAML::BeginMap;
  if (!sc.outputs.report.empty()) e << YAML::Key << "report" << YAML::Value << sc.outputs.report;
  if (!sc.outputs.csv.empty()) e << YAML::Key << "csv" << YAML::Value << sc.outputs.csv;
  if (!sc.outputs.snapshots.empty()) e << YAML::Key << "snapshots" << YAML::Value << sc.outputs.snapshots;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace ppw::cli
