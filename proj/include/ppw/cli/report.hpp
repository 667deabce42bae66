#pragma once

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ppw/cli/scenario.hpp"
#include "ppw/error.hpp"

namespace ppw::cli {

using Json = nlohmann::ordered_json;

struct CheckResult {
  std::string name;
  std::string anchor;
  Stage stage = Stage::scenario;
  double residual = 0.0;
  double tolerance = 0.0;

  bool pass() const { return std::isfinite(residual) && residual <= tolerance; }
};

struct StageFailure {
  Stage stage = Stage::scenario;
  std::string kind;  // precondition | convergence | numerical | internal
  std::string message;
};

struct Report {
  std::string verb;
  std::string scenario;
  int threads = 1;
  double tol_scale = 1.0;
  std::vector<CheckResult> checks;
  std::vector<StageFailure> failures;
  Json details = Json::object();
  Json artifacts = Json::object();

  bool all_pass() const {
    if (!failures.empty()) return false;
    for (const auto& c : checks)
      if (!c.pass()) return false;
    return true;
  }
  int exit_code() const { return all_pass() ? 0 : 1; }

  void fail(const Error& e) {
    std::string kind = "internal";
    if (dynamic_cast<const PreconditionError*>(&e)) kind = "precondition";
    else if (dynamic_cast<const ConvergenceError*>(&e)) kind = "convergence";
    else if (dynamic_cast<const NumericalError*>(&e)) kind = "numerical";
    failures.push_back({e.stage(), kind, e.what()});
  }
};

/// Adds a check from the catalog; the tolerance comes from the scenario.
inline void record(Report& rep, const CheckSpec& spec, double residual) {
  const CheckInfo* info = find_check(spec.name);
  if (!info) throw PreconditionError(Stage::scenario, "unknown check '" + spec.name + "'");
  rep.checks.push_back({spec.name, info->anchor, info->stage, residual, spec.tolerance * rep.tol_scale});
}

inline Json to_json(const Report& rep) {
  Json j;
  j["schema"] = 1;
  j["verb"] = rep.verb;
  j["scenario"] = rep.scenario;
  j["threads"] = rep.threads;
  j["tol_scale"] = rep.tol_scale;
  Json checks = Json::array();
  std::size_t failed = 0;
  for (const auto& c : rep.checks) {
    Json cj;
    cj["name"] = c.name;
    cj["anchor"] = c.anchor;
    cj["stage"] = std::string(stage_name(c.stage));
    if (std::isfinite(c.residual)) cj["residual"] = c.residual;
    else cj["residual"] = nullptr;
    cj["tolerance"] = c.tolerance;
    cj["pass"] = c.pass();
    if (!c.pass()) ++failed;
    checks.push_back(std::move(cj));
  }
  j["checks"] = std::move(checks);
  Json fails = Json::array();
  for (const auto& f : rep.failures)
    fails.push_back(Json{{"stage", std::string(stage_name(f.stage))}, {"kind", f.kind}, {"message", f.message}});
  j["failures"] = std::move(fails);
  j["summary"] = Json{{"checks", rep.checks.size()}, {"failed", failed}, {"stage_failures", rep.failures.size()},
                      {"pass", rep.all_pass()}};
  j["details"] = rep.details;
  j["artifacts"] = rep.artifacts;
  return j;
}

inline std::string dump(const Report& rep) { return to_json(rep).dump(2) + "\n"; }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Stage::io, "cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw Error(Stage::io, "write to '" + path + "' failed");
}

inline Json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Stage::io, "cannot open '" + path + "'");
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Stage::io, "'" + path + "' is not valid JSON: " + e.what());
  }
}

struct DiffLine {
  std::string name;
  std::optional<double> a, b;
  std::optional<bool> pass_a, pass_b;
};

struct ReportDiff {
  std::vector<DiffLine> lines;
  bool schema_match = true;
  bool same_verdicts = true;  // identical check sets and pass flags

  std::string str() const {
    std::ostringstream os;
    os.precision(6);
    if (!schema_match) os << "schema versions differ\n";
    for (const auto& l : lines) {
      os << l.name << ": ";
      if (l.a) os << *l.a << (l.pass_a.value_or(false) ? " (pass)" : " (FAIL)");
      else os << "-";
      os << " -> ";
      if (l.b) os << *l.b << (l.pass_b.value_or(false) ? " (pass)" : " (FAIL)");
      else os << "-";
      if (l.pass_a != l.pass_b) os << "  [verdict changed]";
      os << "\n";
    }
    return os.str();
  }
};

inline ReportDiff diff_reports(const Json& a, const Json& b) {
  ReportDiff d;
  d.schema_match = a.value("schema", -1) == 1 && b.value("schema", -1) == 1;
  if (!d.schema_match) d.same_verdicts = false;
  std::map<std::string, DiffLine> by_name;
  std::vector<std::string> order;
  auto take = [&](const Json& rep, bool first) {
    if (!rep.contains("checks") || !rep["checks"].is_array()) return;
    for (const auto& c : rep["checks"]) {
      const std::string name = c.value("name", std::string{});
      if (!by_name.count(name)) {
        order.push_back(name);
        by_name[name].name = name;
      }
      auto& l = by_name[name];
      std::optional<double> r;
      if (c.contains("residual") && c["residual"].is_number()) r = c["residual"].get<double>();
      const bool p = c.value("pass", false);
      if (first) {
        l.a = r ? r : std::optional<double>(NAN);
        l.pass_a = p;
      } else {
        l.b = r ? r : std::optional<double>(NAN);
        l.pass_b = p;
      }
    }
  };
  take(a, true);
  take(b, false);
  for (const auto& n : order) {
    d.lines.push_back(by_name[n]);
    if (by_name[n].pass_a != by_name[n].pass_b) d.same_verdicts = false;
  }
  const bool fa = a.contains("failures") && !a["failures"].empty();
  const bool fb = b.contains("failures") && !b["failures"].empty();
  if (fa != fb) d.same_verdicts = false;
  return d;
}

}  // namespace ppw::cli
