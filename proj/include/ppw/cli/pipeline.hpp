#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ppw/cli/report.hpp"
#include "ppw/cli/scenario.hpp"
#include "ppw/gauge_flow.hpp"
#include "ppw/moduli.hpp"
#include "ppw/parallel.hpp"
#include "ppw/ppwave.hpp"
#include "ppw/rigidity.hpp"
#include "ppw/scale_ode.hpp"
#include "ppw/spinor.hpp"

namespace ppw::cli {

struct RunOptions {
  int threads = 1;
  double tol_scale = 1.0;
  std::optional<std::string> snapshot_dir;  // overrides the scenario's outputs.snapshots
  bool write_artifacts = true;
};

struct BuiltCurve {
  MetricCurve g;  // unit leaf volume
  ScalarCurve rho;
};

inline TorusGrid make_grid(const Scenario& sc) { return TorusGrid(sc.grid.dim, sc.grid.n); }
inline SGrid make_sgrid(const Scenario& sc) { return SGrid(sc.s.start, sc.s.end, sc.s.samples); }

inline ScalarField build_rho(const TorusGrid& g, const RhoSpec& spec) {
  return sample_scalar(g, [&](const Point& x) {
    double v = spec.value;
    for (const auto& m : spec.modes) {
      double phase = 0.0;
      for (std::size_t i = 0; i < m.k.size(); ++i) phase += m.k[i] * x[i];
      v += m.cos * std::cos(two_pi * phase) + m.sin * std::sin(two_pi * phase);
    }
    return v;
  });
}

namespace detail {

inline SymTensorField diagonal(const TorusGrid& g, const std::vector<double>& diag) {
  const int d = g.dim();
  std::vector<double> m(static_cast<std::size_t>(d * d), 0.0);
  for (int i = 0; i < d; ++i) m[static_cast<std::size_t>(i * d + i)] = diag[static_cast<std::size_t>(i)];
  return constant_tensor(g, m);
}

inline VectorCurve generator_field(const MetricCurve& base, const CurveSpec& spec) {
  const SGrid& sg = base.sgrid;
  const TorusGrid& g = base[0].grid();
  VectorCurve gen{sg, {}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    if (spec.field == "gradient-sine") {
      const ScalarField f = sample_scalar(g, [&](const Point& x) {
        return spec.amplitude * (1.0 + s) * std::sin(two_pi * x[0]) * std::cos(two_pi * x[1]) / two_pi;
      });
      gen.samples.push_back(gradient(MetricField(base[j]), f));
    } else if (spec.field == "shear") {
      VectorField X(g);
      for (std::size_t p = 0; p < g.size(); ++p) X(0, p) = spec.amplitude * s * std::sin(two_pi * g.coordinate(p)[1]);
      gen.samples.push_back(std::move(X));
    } else if (spec.field == "translation") {
      VectorField X(g);
      for (std::size_t p = 0; p < g.size(); ++p) X(0, p) = spec.amplitude;
      gen.samples.push_back(std::move(X));
    } else {
      throw PreconditionError(Stage::scenario, "unknown generator field '" + spec.field + "'");
    }
  }
  return gen;
}

}  // namespace detail

/// Samples the named curve generator. Pullbacks carry their rate through
/// the Lie derivative term.
inline MetricCurve build_metric(const TorusGrid& g, const SGrid& sg, const CurveSpec& spec) {
  const int d = g.dim();
  MetricCurve c{sg, {}, std::vector<SymTensorField>{}};
  if (spec.generator == "constant") {
    std::vector<double> m = spec.metric;
    if (m.empty()) {
      m.assign(static_cast<std::size_t>(d * d), 0.0);
      for (int i = 0; i < d; ++i) m[static_cast<std::size_t>(i * d + i)] = 1.0;
    }
    const SymTensorField gm = constant_tensor(g, m);
    MetricField check(gm);
    for (int j = 0; j < sg.size(); ++j) {
      c.samples.push_back(gm);
      c.derivative->emplace_back(g, 0.0);
    }
  } else if (spec.generator == "diagonal-exponential") {
    for (int j = 0; j < sg.size(); ++j) {
      std::vector<double> v, r;
      for (double rate : spec.rates) {
        v.push_back(std::exp(rate * sg.at(j)));
        r.push_back(rate * v.back());
      }
      c.samples.push_back(detail::diagonal(g, v));
      c.derivative->push_back(detail::diagonal(g, r));
    }
  } else if (spec.generator == "periodic-diagonal") {
    for (int j = 0; j < sg.size(); ++j) {
      const double w = two_pi / spec.period, s = sg.at(j);
      const double a = 2 * spec.epsilon * std::sin(w * s), ad = 2 * spec.epsilon * w * std::cos(w * s);
      std::vector<double> v(static_cast<std::size_t>(d), 1.0), r(static_cast<std::size_t>(d), 0.0);
      v[0] = std::exp(a);
      v[1] = std::exp(-a);
      r[0] = ad * v[0];
      r[1] = -ad * v[1];
      c.samples.push_back(detail::diagonal(g, v));
      c.derivative->push_back(detail::diagonal(g, r));
    }
  } else if (spec.generator == "pullback") {
    if (spec.base.size() != 1) throw PreconditionError(Stage::scenario, "pullback needs exactly one base curve");
    const MetricCurve base = normalize(build_metric(g, sg, spec.base[0])).base;
    const DiffeoFamily fam = integrate_flow(detail::generator_field(base, spec), sg.start());
    ModuliCurve mc{base, ScalarCurve{sg, std::vector<ScalarField>(static_cast<std::size_t>(sg.size()), ScalarField(g)), std::nullopt},
                   std::vector<double>(static_cast<std::size_t>(sg.size()), 1.0),
                   std::vector<double>(static_cast<std::size_t>(sg.size()), 0.0), std::nullopt};
    c = pullback(fam, mc).g;
  } else {
    throw PreconditionError(Stage::scenario, "unknown generator '" + spec.generator + "'");
  }
  return c;
}

inline BuiltCurve build_curve(const Scenario& sc) {
  const TorusGrid g = make_grid(sc);
  const SGrid sg = make_sgrid(sc);
  BuiltCurve out{normalize(build_metric(g, sg, sc.curve)).base, ScalarCurve{sg, {}, std::nullopt}};
  const ScalarField rho = build_rho(g, sc.rho);
  out.rho.samples.assign(static_cast<std::size_t>(sg.size()), rho);
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline std::optional<std::string> snapshot_dir(const Scenario& sc, const RunOptions& opt) {
  if (opt.snapshot_dir && !opt.snapshot_dir->empty()) return opt.snapshot_dir;
  if (!sc.outputs.snapshots.empty()) return sc.outputs.snapshots;
  return std::nullopt;
}

/// One row per grid point: coordinates, lapse, leaf metric entries, rho.
inline void write_snapshot(const std::string& path, const PPWaveMetric& pp, int j, const ScalarField* rho) {
  const TorusGrid& g = pp.grid();
  const int d = g.dim();
  std::ostringstream os;
  os.precision(17);
  for (int i = 0; i < d; ++i) os << "x" << i << ",";
  os << "u";
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) os << ",g" << a << b;
  if (rho) os << ",rho";
  os << "\n";
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Point x = g.coordinate(p);
    for (int i = 0; i < d; ++i) os << x[static_cast<std::size_t>(i)] << ",";
    os << pp.u[j][p];
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b) os << "," << pp.g[j].at(a, b, p);
    if (rho) os << "," << (*rho)[p];
    os << "\n";
  }
  write_text(path, os.str());
}

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline void snapshots(Report& rep, const Scenario& sc, const RunOptions& opt, const PPWaveMetric& pp, const ScalarCurve* rho) {
  const auto dir = snapshot_dir(sc, opt);
  if (!dir || !opt.write_artifacts) return;
  std::filesystem::create_directories(*dir);
  Json files = Json::array();
  const int m = pp.size();
  std::vector<int> js{0, m / 2, m - 1};
  js.erase(std::unique(js.begin(), js.end()), js.end());
  for (int j : js) {
    const std::string name = sc.name + "_" + rep.verb + "_s" + std::to_string(j) + ".csv";
    write_snapshot((std::filesystem::path(*dir) / name).string(), pp, j, rho ? &(*rho)[j] : nullptr);
    files.push_back(name);
  }
  rep.artifacts["snapshots"] = files;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

struct Assembled {
  BuiltCurve input;
  GaugedCurve gauged;
  ScalarCurve rho;  // pulled back to the gauge
  ScaleData data;
  LambdaSolution lambda;
  Assembly assembly;
};

inline Assembled assemble_scenario(const Scenario& sc, Report& rep) {
  BuiltCurve in = build_curve(sc);
  GaugedCurve gauged = make_divergence_free(in.g);
  ScalarCurve rho = pullback(gauged.family, in.rho);
  ScaleData data = compute_scale_data(gauged.curve, rho);
  LambdaSolution lam = solve_lambda(data, sc.lambda.s_star, sc.lambda.value, sc.lambda.rate, OdeOptions{4});
  const int comp = lam.component_containing(sc.lambda.s_star);
  Assembly as = assemble(gauged.curve, rho, data, lam, comp);
  Json zeros = Json::array();
  for (const auto& z : lam.zeros) zeros.push_back(Json{{"s", z.s}, {"slope", z.slope}});
  rep.details["lambda_zeros"] = zeros;
  rep.details["component"] = Json::array({as.metric.sgrid.start(), as.metric.sgrid.end()});
  return Assembled{std::move(in), std::move(gauged), std::move(rho), std::move(data), std::move(lam), std::move(as)};
}

inline const CheckSpec* wanted(const Scenario& sc, const char* name) {
  for (const auto& c : sc.checks)
    if (c.name == name) return &c;
  return nullptr;
}

inline bool wants_any(const Scenario& sc, std::initializer_list<const char*> names) {
  for (const char* n : names)
    if (wanted(sc, n)) return true;
  return false;
}

inline void write_series(Report& rep, const Scenario& sc, const RunOptions& opt, const LambdaSolution& lam,
                         const ScaleData& data) {
  if (sc.outputs.csv.empty() || !opt.write_artifacts) return;
  ensure_parent(sc.outputs.csv);
  std::ostringstream os;
  lam.write_csv(os, &data);
  write_text(sc.outputs.csv, os.str());
  rep.artifacts["csv"] = sc.outputs.csv;
}

inline Report new_report(const std::string& verb, const Scenario& sc, const RunOptions& opt) {
  parallel::set_max_threads(opt.threads);
  Report rep;
  rep.verb = verb;
  rep.scenario = sc.name;
  rep.threads = opt.threads;
  rep.tol_scale = opt.tol_scale;
  return rep;
}

/// Runs `body`, turning library errors into stage failures.
inline void guarded(Report& rep, const std::function<void()>& body) {
  try {
    body();
  } catch (const Error& e) {
    rep.fail(e);
  } catch (const std::exception& e) {
    rep.failures.push_back({Stage::scenario, "internal", e.what()});
  }
}

inline ModuliCurve component_curve(const Assembled& a) {
  const int first = a.assembly.first, n = a.assembly.metric.size();
  const SGrid& sub = a.assembly.metric.sgrid;
  ModuliCurve mc{MetricCurve{sub, {}, std::nullopt}, ScalarCurve{sub, {}, std::nullopt}, {}, {}, std::nullopt};
  if (a.input.g.derivative) mc.g.derivative.emplace();
  for (int i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(first + i);
    mc.g.samples.push_back(a.input.g.samples[j]);
    if (a.input.g.derivative) mc.g.derivative->push_back((*a.input.g.derivative)[j]);
    mc.rho.samples.push_back(a.input.rho.samples[j]);
    mc.lambda.push_back(a.lambda.lambda[j]);
    mc.lambda_dot.push_back(a.lambda.lambda_dot[j]);
  }
  return mc;
}

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

/// gauge -> scale ODE -> assemble -> checks.
inline Report run(const Scenario& sc, const RunOptions& opt = {}) {
  Report rep = new_report("run", sc, opt);
  guarded(rep, [&] {
    const Assembled a = assemble_scenario(sc, rep);
    const PPWaveMetric& pp = a.assembly.metric;
    const int d = pp.dim();
    if (const auto* c = wanted(sc, "gauge-divergence")) record(rep, *c, a.gauged.divergence_residual);
    if (const auto* c = wanted(sc, "gauge-trace")) record(rep, *c, a.gauged.trace_residual);
    if (const auto* c = wanted(sc, "leaf-volume")) {
      double r = 0.0;
      for (int i = 0; i < pp.size(); ++i) {
        const double l = a.lambda.lambda[static_cast<std::size_t>(a.assembly.first + i)];
        r = std::max(r, std::abs(std::pow(MetricField(pp.g[i]).volume(), 1.0 / d) - std::abs(l)));
      }
      record(rep, *c, r);
    }
    if (const auto* c = wanted(sc, "lapse-solvability")) record(rep, *c, a.assembly.solvability);
    if (const auto* c = wanted(sc, "energy-condition")) record(rep, *c, std::max(0.0, -energy_condition(a.assembly.rho).min_rho));
    if (const auto* c = wanted(sc, "rho-target")) {
      PPWaveMetric bare = pp;
      bare.scale.reset();
      const auto cf = ricci_closed_form(bare, 8);
      double r = 0.0;
      for (int j = 0; j < pp.size(); ++j) r = std::max(r, (cf.rho[j] - a.assembly.rho[j]).max_abs());
      record(rep, *c, r);
    }
    if (wants_any(sc, {"ricci-blocks", "ricci-null-blocks", "null-ricci", "curvature-vanishing", "traced-curvature"})) {
      const auto samples = ricci_fd_oracle(pp, OracleOptions{1e-3, std::max(1, sc.grid.n / 4), 20, 1e-2, std::nullopt});
      const auto cf = ricci_closed_form(pp);
      const RicciComparison cmp = compare_ricci(cf, samples);
      if (const auto* c = wanted(sc, "ricci-blocks")) record(rep, *c, std::max({cmp.ss, cmp.mixed, cmp.spatial}));
      if (const auto* c = wanted(sc, "ricci-null-blocks")) record(rep, *c, cmp.null_blocks);
      if (const auto* c = wanted(sc, "null-ricci")) record(rep, *c, null_ricci_residual(samples, &a.assembly.rho));
      if (wants_any(sc, {"curvature-vanishing", "traced-curvature"})) {
        const CurvatureVanishing cv = curvature_vanishing_check(samples, pp);
        if (const auto* c = wanted(sc, "curvature-vanishing")) record(rep, *c, cv.full);
        if (const auto* c = wanted(sc, "traced-curvature")) record(rep, *c, cv.traced);
      }
      rep.details["oracle_points"] = cmp.points;
    }
    if (const auto* c = wanted(sc, "roundtrip")) {
      const RoundtripResult rt = roundtrip(component_curve(a));
      record(rep, *c, std::max(rt.report.worst(), rt.lambda_ode));
    }
    write_series(rep, sc, opt, a.lambda, a.data);
    snapshots(rep, sc, opt, pp, &a.assembly.rho);
  });
  return rep;
}

/// Scale data and lambda only: comparison bounds, Wronskian, invariance.
inline Report check_ode(const Scenario& sc, const RunOptions& opt = {}) {
  Report rep = new_report("check-ode", sc, opt);
  guarded(rep, [&] {
    const BuiltCurve in = build_curve(sc);
    const ScaleData data = compute_scale_data(in.g, in.rho);
    const ScaleCoefficient q(data);
    const LambdaSolution lam = solve_lambda(q, sc.lambda.s_star, sc.lambda.value, sc.lambda.rate, OdeOptions{4});
    const auto qs = data.coefficient();
    const double C = *std::max_element(qs.begin(), qs.end()), cmin = *std::min_element(qs.begin(), qs.end());
    Json zeros = Json::array();
    for (const auto& z : lam.zeros) zeros.push_back(Json{{"s", z.s}, {"slope", z.slope}});
    rep.details["lambda_zeros"] = zeros;
    rep.details["coefficient_range"] = Json::array({cmin, C});
    if (const auto* c = wanted(sc, "ode-comparison")) {
      const auto zs = check_zero_spacing(lam, C, cmin);
      rep.details["comparison_violations"] = zs.violations;
      record(rep, *c, static_cast<double>(zs.violations.size()));
    }
    if (const auto* c = wanted(sc, "ode-wronskian")) {
      const auto basis = solution_basis(q, sc.lambda.s_star, OdeOptions{4});
      double r = 0.0;
      for (double w : basis.wronskian()) r = std::max(r, std::abs(w - 1.0));
      record(rep, *c, r);
    }
    if (const auto* c = wanted(sc, "ode-invariance")) {
      CurveSpec flow;
      flow.field = sc.grid.dim >= 2 ? "shear" : "translation";
      flow.amplitude = 0.005;
      const DiffeoFamily fam = integrate_flow(detail::generator_field(in.g, flow), in.g.sgrid.start());
      // pulled-back leaves are flat only up to interpolation error
      SplitOptions split;
      split.flat_tol = 1e-6;
      const auto r = check_invariance(
          in.g, in.rho, fam,
          [](double s) {
            const double c = std::exp(0.3 * s);
            return std::pair{c, 0.3 * c};
          },
          split);
      record(rep, *c, std::max(r.P, r.Sigma));
    }
    write_series(rep, sc, opt, lam, data);
  });
  return rep;
}

/// Assembles the wave, transports the constrained spinor and checks it.
inline Report spinor(const Scenario& sc, const RunOptions& opt = {}) {
  Report rep = new_report("spinor", sc, opt);
  guarded(rep, [&] {
    const Assembled a = assemble_scenario(sc, rep);
    const SpinorGeometry geo(extract_ids(a.assembly.metric));
    const TransportResult tr = transport(geo);
    rep.details["transport_warnings"] = tr.warnings;
    rep.details["initial_parallel"] = tr.initial_parallel;
    const SpinorProfile prof = spinor_profile(geo, tr.psi);
    auto sup = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m = std::max(m, std::abs(x));
      return m;
    };
    rep.details["G_max"] = sup(prof.G);
    rep.details["norm_drift"] = sup(prof.norm_drift);
    if (const auto* c = wanted(sc, "spinor-parallel")) record(rep, *c, sup(prof.nabla));
    if (const auto* c = wanted(sc, "spinor-constraint")) record(rep, *c, sup(prof.constraint));
    if (const auto* c = wanted(sc, "spinor-null-current")) {
      const CliffordModel& cl = geo.clifford();
      double r = 0.0;
      for (int j = 0; j < tr.psi.count(); ++j)
        for (Eigen::Index p = 0; p < tr.psi[j].rows(); ++p) {
          const Eigen::VectorXcd v = tr.psi[j].row(p).transpose();
          const double n2 = v.squaredNorm();
          double u2 = 0.0;
          for (int b = 0; b <= geo.dim(); ++b) u2 += std::pow(v.dot(cl.e0 * cl.frame(b) * v).real(), 2);
          r = std::max(r, std::abs(u2 - n2 * n2) / (n2 * n2));
        }
      record(rep, *c, r);
    }
    if (const auto* c = wanted(sc, "spinor-lichnerowicz")) {
      double r = 0.0;
      const int m = tr.psi.count();
      for (int j = 0; j < m; j += std::max(1, m / 10)) r = std::max(r, std::abs(lichnerowicz_identity(geo, tr.psi, j).residual()));
      record(rep, *c, r);
    }
    if (!sc.outputs.csv.empty() && opt.write_artifacts) {
      ensure_parent(sc.outputs.csv);
      write_csv(prof, sc.outputs.csv);
      rep.artifacts["csv"] = sc.outputs.csv;
    }
    snapshots(rep, sc, opt, a.assembly.metric, &a.assembly.rho);
  });
  return rep;
}

/// Treats the scenario interval as one period of the curve.
inline Report rigidity(const Scenario& sc, const RunOptions& opt = {}) {
  Report rep = new_report("rigidity", sc, opt);
  guarded(rep, [&] {
    const BuiltCurve in = build_curve(sc);
    const double period = sc.curve.generator == "periodic-diagonal" ? sc.curve.period : sc.s.end - sc.s.start;
    const PeriodicCurve pc{in.g, in.rho, period, TorusMap::identity(sc.grid.dim)};
    const RigidityReport rr = rigidity_check(pc);
    if (const auto* c = wanted(sc, "rigidity-periodicity")) record(rep, *c, rr.periodicity);
    Json r;
    r["verdict"] = verdict_name(rr.verdict);
    r["max_coefficient"] = rr.max_coefficient;
    r["max_sigma"] = rr.max_sigma;
    r["max_rho_mean"] = rr.max_rho_mean;
    if (rr.certificate)
      r["certificate"] = Json{{"s_star", rr.certificate->s_star}, {"zero", rr.certificate->zero}, {"slope", rr.certificate->slope}};
    if (rr.product) {
      const TorusGrid& g = rr.product->grid();
      Json metric = Json::array();
      for (int a = 0; a < g.dim(); ++a) {
        Json row = Json::array();
        for (int b = 0; b < g.dim(); ++b) row.push_back(rr.product->g[0].at(a, b, 0));
        metric.push_back(row);
      }
      r["product_metric"] = Json{{"lapse", 1.0}, {"leaf_metric_at_origin", metric}};
      snapshots(rep, sc, opt, *rr.product, nullptr);
    }
    rep.details["rigidity"] = r;
  });
  return rep;
}

}  // namespace ppw::cli
