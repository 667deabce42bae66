#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "ppw/gauge_flow.hpp"
#include "ppw/ppwave.hpp"
#include "ppw/scale_ode.hpp"

namespace ppw {

/// (g_s, rho_s, lambda_s) with unit-volume g_s; gauge records the family that
/// produced this representative, if any.
struct ModuliCurve {
  MetricCurve g;
  ScalarCurve rho;
  std::vector<double> lambda;
  std::vector<double> lambda_dot;
  std::optional<DiffeoFamily> gauge;

  const SGrid& sgrid() const { return g.sgrid; }

  void validate(double volume_tol = 1e-10) const {
    g.validate();
    rho.validate();
    if (!(rho.sgrid == g.sgrid)) throw PreconditionError(Stage::moduli, "rho and metric curves use different s-grids");
    const auto m = static_cast<std::size_t>(g.size());
    if (lambda.size() != m || lambda_dot.size() != m) throw PreconditionError(Stage::moduli, "lambda sample count mismatch");
    for (int j = 0; j < g.size(); ++j) {
      const double vol = MetricField(g[j]).volume();
      if (std::abs(vol - 1.0) > volume_tol) {
        std::ostringstream os;
        os << "moduli curve must have unit volume; found " << vol << " at s = " << g.sgrid.at(j);
        throw PreconditionError(Stage::moduli, os.str());
      }
      if (!(lambda[static_cast<std::size_t>(j)] > 0.0)) {
        std::ostringstream os;
        os << "lambda must be positive; found " << lambda[static_cast<std::size_t>(j)] << " at s = " << g.sgrid.at(j);
        throw PreconditionError(Stage::moduli, os.str());
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Volume normalization
// ---------------------------------------------------------------------------

struct Normalized {
  MetricCurve base;  // g_s / lambda_s^2, unit volume
  std::vector<double> lambda;
  std::vector<double> lambda_dot;
};

/// lambda_s = vol(g_s)^{1/d}. The base carries a derivative when the input does.
inline Normalized normalize(const MetricCurve& curve) {
  curve.validate();
  const int d = curve[0].grid().dim();
  Normalized out{MetricCurve{curve.sgrid, {}, std::nullopt}, {}, {}};
  std::vector<double> vol;
  for (int j = 0; j < curve.size(); ++j) vol.push_back(MetricField(curve[j]).volume());
  std::vector<double> dvol;
  if (curve.derivative) {
    for (int j = 0; j < curve.size(); ++j) {
      const MetricField m(curve[j]);
      dvol.push_back(0.5 * integrate(trace(m, (*curve.derivative)[static_cast<std::size_t>(j)]), m.sqrt_det()));
    }
  } else {
    dvol = fd_derivative(vol, curve.sgrid.step());
  }
  if (curve.derivative) out.base.derivative.emplace();
  for (int j = 0; j < curve.size(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const double l = std::pow(vol[uj], 1.0 / d);
    const double ld = l * dvol[uj] / (d * vol[uj]);
    out.lambda.push_back(l);
    out.lambda_dot.push_back(ld);
    out.base.samples.push_back((1.0 / (l * l)) * curve[j]);
    if (curve.derivative) {
      SymTensorField r = (1.0 / (l * l)) * (*curve.derivative)[uj];
      r.axpy(-2.0 * ld / (l * l * l), curve[j]);
      out.base.derivative->push_back(std::move(r));
    }
  }
  return out;
}

/// lambda_s^2 g_s, with the product-rule derivative when the base has one.
inline MetricCurve scale(const MetricCurve& base, const std::vector<double>& lambda, const std::vector<double>& lambda_dot) {
  base.validate();
  if (lambda.size() != base.samples.size() || lambda_dot.size() != base.samples.size())
    throw PreconditionError(Stage::moduli, "lambda sample count mismatch");
  MetricCurve out{base.sgrid, {}, std::nullopt};
  if (base.derivative) out.derivative.emplace();
  for (int j = 0; j < base.size(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const double l = lambda[uj];
    out.samples.push_back((l * l) * base[j]);
    if (base.derivative) {
      SymTensorField r = (l * l) * (*base.derivative)[uj];
      r.axpy(2.0 * l * lambda_dot[uj], base[j]);
      out.derivative->push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Equivalence
// ---------------------------------------------------------------------------

struct EquivalenceReport {
  double metric = 0.0;  // sup |g^A_s - psi_s^* g^B_{alpha s + beta}|
  double rho = 0.0;     // sup |rho^A_s - alpha^2 psi_s^* rho^B_{alpha s + beta}|
  double lambda = 0.0;  // sup |lambda^A_s - lambda^B_{alpha s + beta}|

  double worst() const { return std::max({metric, rho, lambda}); }
  bool holds(double tol) const { return worst() <= tol; }
};

namespace detail {

template <class F>
F sample_at(const FieldCurve<F>& c, double t) {
  const SGrid& sg = c.sgrid;
  const int j = sg.nearest(t);
  if (std::abs(sg.at(j) - t) <= 1e-9 * sg.step()) return c[j];
  return lagrange_eval(sg, c.samples, t, 6);
}

inline double value_at(const SGrid& sg, const std::vector<double>& v, double t) {
  const int j = sg.nearest(t);
  if (std::abs(sg.at(j) - t) <= 1e-9 * sg.step()) return v[static_cast<std::size_t>(j)];
  return lagrange_eval(sg, v, t, 6);
}

}  // namespace detail

/// Compares A with B reparametrized by s -> alpha s + beta and pulled back by
/// psi_s (one map per sample of A; identity when empty).
inline EquivalenceReport equivalent(const ModuliCurve& A, const ModuliCurve& B, double alpha, double beta,
                                    const std::vector<Diffeo>& psi = {}) {
  A.g.validate();
  B.g.validate();
  if (alpha == 0.0) throw PreconditionError(Stage::moduli, "alpha must be nonzero");
  const SGrid& sa = A.sgrid();
  const SGrid& sb = B.sgrid();
  double lo = alpha * sa.start() + beta, hi = alpha * sa.end() + beta;
  if (lo > hi) std::swap(lo, hi);
  const double tol = 1e-9 * std::max(1.0, std::abs(sb.end() - sb.start()));
  if (std::abs(lo - sb.start()) > tol || std::abs(hi - sb.end()) > tol) {
    std::ostringstream os;
    os << "s -> " << alpha << " s + " << beta << " maps [" << sa.start() << ", " << sa.end() << "] to [" << lo << ", "
       << hi << "], not onto [" << sb.start() << ", " << sb.end() << "]";
    throw PreconditionError(Stage::moduli, os.str());
  }
  if (!psi.empty() && static_cast<int>(psi.size()) != A.g.size())
    throw PreconditionError(Stage::moduli, "one diffeomorphism per sample is required");
  EquivalenceReport r;
  for (int j = 0; j < A.g.size(); ++j) {
    const double t = std::clamp(alpha * sa.at(j) + beta, sb.start(), sb.end());
    SymTensorField gb = detail::sample_at(B.g, t);
    ScalarField rb = detail::sample_at(B.rho, t);
    if (!psi.empty()) {
      gb = pullback(psi[static_cast<std::size_t>(j)], gb);
      rb = pullback(psi[static_cast<std::size_t>(j)], rb);
    }
    rb *= alpha * alpha;
    r.metric = std::max(r.metric, (A.g[j] - gb).max_abs());
    r.rho = std::max(r.rho, (A.rho[j] - rb).max_abs());
    r.lambda = std::max(r.lambda, std::abs(A.lambda[static_cast<std::size_t>(j)] - detail::value_at(sb, B.lambda, t)));
  }
  return r;
}

/// B_t = A_{(t - beta)/alpha} with rho rescaled by alpha^{-2}, sampled on the
/// image grid.
inline ModuliCurve reparametrize(const ModuliCurve& A, double alpha, double beta) {
  if (alpha == 0.0) throw PreconditionError(Stage::moduli, "alpha must be nonzero");
  const SGrid& sa = A.sgrid();
  const double a = alpha * sa.start() + beta, b = alpha * sa.end() + beta;
  const SGrid sb(std::min(a, b), std::max(a, b), sa.size());
  ModuliCurve B{MetricCurve{sb, {}, std::nullopt}, ScalarCurve{sb, {}, std::nullopt}, {}, {}, std::nullopt};
  const bool derivative = A.g.derivative.has_value();
  if (derivative) B.g.derivative.emplace();
  for (int i = 0; i < sb.size(); ++i) {
    const int j = alpha > 0 ? i : sa.size() - 1 - i;
    const auto uj = static_cast<std::size_t>(j);
    B.g.samples.push_back(A.g[j]);
    if (derivative) B.g.derivative->push_back((1.0 / alpha) * (*A.g.derivative)[uj]);
    B.rho.samples.push_back((1.0 / (alpha * alpha)) * A.rho[j]);
    B.lambda.push_back(A.lambda[uj]);
    B.lambda_dot.push_back(A.lambda_dot[uj] / alpha);
  }
  return B;
}

// ---------------------------------------------------------------------------
// Round trip
// ---------------------------------------------------------------------------

/// Reads (g~, rho~, lambda~) back from a pp-wave: lambda~ from leaf volumes,
/// g~ = g / lambda~^2, rho~ from the closed-form null Ricci profile.
inline ModuliCurve extract_moduli(const PPWaveMetric& pp) {
  pp.validate();
  PPWaveMetric bare = pp;
  bare.scale.reset();
  const auto n = normalize(pp.g);
  return ModuliCurve{n.base, ricci_closed_form(bare, 8).rho, n.lambda, n.lambda_dot, std::nullopt};
}

struct RoundtripOptions {
  GaugeOptions gauge{};
  AssembleOptions assemble{};
  OdeOptions ode{4};
  SplitOptions split{};
  std::optional<double> s_star;  // lambda initial data taken here; defaults to the middle sample
};

struct RoundtripResult {
  Assembly assembly;
  DiffeoFamily gauge;
  ModuliCurve extracted;     // on the assembly's s-grid
  EquivalenceReport report;  // extracted vs the input through the gauge family
  double lambda_ode = 0.0;   // sup |lambda solved from initial data - input lambda|
};

/// gauge -> assemble -> extract, then the equivalence check against the input.
inline RoundtripResult roundtrip(const ModuliCurve& mc, const RoundtripOptions& opt = {}) {
  mc.validate();
  const SGrid& sg = mc.sgrid();
  GaugedCurve gauged = make_divergence_free(mc.g, opt.gauge);
  const ScalarCurve rho = pullback(gauged.family, mc.rho);
  const ScaleData data = compute_scale_data(gauged.curve, rho, opt.split);
  const int jstar = opt.s_star ? sg.nearest(*opt.s_star) : sg.size() / 2;
  const auto us = static_cast<std::size_t>(jstar);
  const LambdaSolution lam = solve_lambda(data, sg.at(jstar), mc.lambda[us], mc.lambda_dot[us], opt.ode);
  double ode = 0.0;
  for (std::size_t j = 0; j < mc.lambda.size(); ++j) ode = std::max(ode, std::abs(lam.lambda[j] - mc.lambda[j]));
  const int comp = lam.component_containing(sg.at(jstar));
  Assembly asmb = assemble(gauged.curve, rho, data, lam, comp, opt.assemble);

  ModuliCurve extracted = extract_moduli(asmb.metric);
  const int n = asmb.metric.size();
  ModuliCurve input{MetricCurve{asmb.metric.sgrid, {}, std::nullopt}, ScalarCurve{asmb.metric.sgrid, {}, std::nullopt}, {}, {},
                    std::nullopt};
  std::vector<Diffeo> maps;
  for (int i = 0; i < n; ++i) {
    const int j = asmb.first + i;
    input.g.samples.push_back(mc.g[j]);
    input.rho.samples.push_back(mc.rho[j]);
    input.lambda.push_back(mc.lambda[static_cast<std::size_t>(j)]);
    input.lambda_dot.push_back(mc.lambda_dot[static_cast<std::size_t>(j)]);
    maps.push_back(gauged.family[j]);
  }
  EquivalenceReport rep = equivalent(extracted, input, 1.0, 0.0, maps);
  return RoundtripResult{std::move(asmb), std::move(gauged.family), std::move(extracted), rep, ode};
}

/// Diffeomorphism-invariant data of a moduli curve per sample.
struct Invariants {
  std::vector<double> lambda, P, Sigma, rho_l2;
};

inline Invariants invariants(const ModuliCurve& mc, const SplitOptions& split = {}) {
  const ScaleData data = compute_scale_data(mc.g, mc.rho, split);
  Invariants out{mc.lambda, data.P, data.Sigma, {}};
  for (int j = 0; j < mc.g.size(); ++j) {
    const MetricField m(mc.g[j]);
    out.rho_l2.push_back(std::sqrt(integrate(mc.rho[j] * mc.rho[j], m.sqrt_det())));
  }
  return out;
}

struct InvariantComparison {
  double lambda = 0.0, P = 0.0, Sigma = 0.0, rho_l2 = 0.0;
  double worst() const { return std::max({lambda, P, Sigma, rho_l2}); }
};

inline InvariantComparison compare_invariants(const Invariants& a, const Invariants& b) {
  if (a.lambda.size() != b.lambda.size()) throw PreconditionError(Stage::moduli, "invariant series differ in length");
  InvariantComparison c;
  for (std::size_t j = 0; j < a.lambda.size(); ++j) {
    c.lambda = std::max(c.lambda, std::abs(a.lambda[j] - b.lambda[j]));
    c.P = std::max(c.P, std::abs(a.P[j] - b.P[j]));
    c.Sigma = std::max(c.Sigma, std::abs(a.Sigma[j] - b.Sigma[j]));
    c.rho_l2 = std::max(c.rho_l2, std::abs(a.rho_l2[j] - b.rho_l2[j]));
  }
  return c;
}

/// Pulls a moduli curve back by a family; the metric rate gains the Lie term.
inline ModuliCurve pullback(const DiffeoFamily& fam, const ModuliCurve& mc) {
  const auto rate = s_derivative(mc.g);
  ModuliCurve out{MetricCurve{mc.sgrid(), {}, std::vector<SymTensorField>{}}, ScalarCurve{mc.sgrid(), {}, std::nullopt},
                  mc.lambda, mc.lambda_dot, fam};
  for (int j = 0; j < mc.g.size(); ++j) {
    const MetricField m(mc.g[j]);
    out.g.samples.push_back(pullback(fam[j], mc.g[j]));
    out.g.derivative->push_back(pullback(fam[j], rate[j] + lie_metric(m, fam.generator[j])));
    out.rho.samples.push_back(pullback(fam[j], mc.rho[j]));
  }
  return out;
}

/// Round trips two representatives of the same class and compares the
/// diffeomorphism-invariant data of the two assembled pp-waves.
struct RepresentativeCheck {
  RoundtripResult first, second;
  InvariantComparison invariants;
};

inline RepresentativeCheck compare_representatives(const ModuliCurve& a, const ModuliCurve& b, const RoundtripOptions& opt = {}) {
  RoundtripResult ra = roundtrip(a, opt);
  RoundtripResult rb = roundtrip(b, opt);
  if (!(ra.extracted.sgrid() == rb.extracted.sgrid()))
    throw NumericalError(Stage::moduli, "representatives assembled on different components");
  const InvariantComparison c = compare_invariants(invariants(ra.extracted, opt.split), invariants(rb.extracted, opt.split));
  return RepresentativeCheck{std::move(ra), std::move(rb), c};
}

}  // namespace ppw
