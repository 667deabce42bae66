// ppwf: scenario runner for the pp-wave construction pipeline.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "ppw/cli/pipeline.hpp"

namespace {

using namespace ppw::cli;

struct Global {
  int threads = 1;
  double tol_scale = 1.0;
  std::string snapshot_dir;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ppw::Error(ppw::Stage::io, "cannot open '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int execute(const std::string& verb, const std::string& path, const Global& g) {
  std::string text;
  try {
    text = slurp(path);
  } catch (const ppw::Error& e) {
    std::cerr << "ppwf: " << e.what() << "\n";
    return 1;
  }
  const ParseResult parsed = parse_scenario(text);
  if (!parsed.ok()) {
    for (const auto& e : parsed.errors) std::cerr << path << ":" << e.str() << "\n";
    return 1;
  }
  const Scenario& sc = *parsed.scenario;

  RunOptions opt;
  opt.threads = g.threads;
  opt.tol_scale = g.tol_scale;
  if (!g.snapshot_dir.empty()) opt.snapshot_dir = g.snapshot_dir;
  else if (const char* env = std::getenv("PPWF_SNAPSHOT_DIR"); env && *env) opt.snapshot_dir = env;

  Report rep;
  if (verb == "run") rep = run(sc, opt);
  else if (verb == "check-ode") rep = check_ode(sc, opt);
  else if (verb == "spinor") rep = spinor(sc, opt);
  else rep = rigidity(sc, opt);

  const std::string json = dump(rep);
  if (sc.outputs.report.empty()) {
    std::cout << json;
  } else {
    try {
      ensure_parent(sc.outputs.report);
      write_text(sc.outputs.report, json);
    } catch (const std::exception& e) {
      std::cerr << "ppwf: " << e.what() << "\n";
      return 1;
    }
  }
  for (const auto& c : rep.checks)
    std::cerr << (c.pass() ? "PASS " : "FAIL ") << c.name << " residual=" << c.residual << " tol=" << c.tolerance << "\n";
  for (const auto& f : rep.failures)
    std::cerr << "ERROR [" << ppw::stage_name(f.stage) << "/" << f.kind << "] " << f.message << "\n";
  return rep.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ppwf - pp-wave construction and verification runner"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--threads", g.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  app.add_option("--tol-scale", g.tol_scale, "Multiplier applied to every check tolerance")->check(CLI::PositiveNumber);
  app.add_option("--snapshot-dir", g.snapshot_dir, "Field snapshot directory (overrides PPWF_SNAPSHOT_DIR)");

  std::string scenario;
  std::string verb;
  for (const char* name : {"run", "check-ode", "spinor", "rigidity"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    sub->callback([&verb, name] { verb = name; });
  }
  app.get_subcommand("run")->description("gauge, scale ODE, assembly and verification checks");
  app.get_subcommand("check-ode")->description("scale data, lambda and comparison bounds only");
  app.get_subcommand("spinor")->description("parallel spinor transport on the assembled wave");
  app.get_subcommand("rigidity")->description("rigidity verdict for one period of a curve");

  std::string a, b;
  auto* diff = app.add_subcommand("report-diff", "compare two JSON reports check by check");
  diff->add_option("a", a)->required()->check(CLI::ExistingFile);
  diff->add_option("b", b)->required()->check(CLI::ExistingFile);
  diff->callback([&verb] { verb = "report-diff"; });

  CLI11_PARSE(app, argc, argv);

  if (verb == "report-diff") {
    try {
      const ReportDiff d = diff_reports(read_json(a), read_json(b));
      std::cout << d.str();
      return d.same_verdicts ? 0 : 1;
    } catch (const std::exception& e) {
      std::cerr << "ppwf: " << e.what() << "\n";
      return 1;
    }
  }
  return execute(verb, scenario, g);
}
