#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ppw/gauge_flow.hpp"
#include "ppw/ppwave.hpp"

namespace ppw {

struct HypersurfaceOptions {
  FlowOptions flow{};
  std::optional<double> anchor;  // phi_s = id here; defaults to the first sample
};

struct HypersurfaceChange {
  PPWaveMetric metric;
  DiffeoFamily family;
  double min_coefficient = 0.0;  // min of the new u^{-2} before the square root
};

/// Moves to the null hypersurfaces {v' = v - f}. Leaves are transported by the
/// flow of -grad f so that the mixed ds dx terms cancel; the new ds^2
/// coefficient is phi^*(u^{-2} + 2 fdot - |df|^2).
inline HypersurfaceChange change_hypersurface(const PPWaveMetric& pp, const ScalarCurve& f,
                                              const HypersurfaceOptions& opt = {}) {
  pp.validate();
  f.validate();
  if (!(f.sgrid == pp.sgrid)) throw PreconditionError(Stage::geometry, "f and the metric use different s-grids");
  const SGrid& sg = pp.sgrid;
  const auto fdot = s_derivative(f);
  const auto grate = s_derivative(pp.g);

  VectorCurve gen{sg, {}, std::nullopt};
  std::vector<ScalarField> coeff;
  for (int j = 0; j < sg.size(); ++j) {
    const MetricField m(pp.g[j]);
    VectorField x = gradient(m, f[j]);
    x *= -1.0;
    gen.samples.push_back(std::move(x));
    ScalarField c = lapse_coefficient(pp.u[j]);
    c.axpy(2.0, fdot[j]);
    c -= norm_sq(m, differential(f[j]));
    coeff.push_back(std::move(c));
  }
  HypersurfaceChange out{PPWaveMetric{sg, ScalarCurve{sg, {}, std::nullopt}, MetricCurve{sg, {}, std::vector<SymTensorField>{}},
                                      std::nullopt},
                         integrate_flow(gen, opt.anchor.value_or(sg.start()), opt.flow),
                         std::numeric_limits<double>::infinity()};
  for (int j = 0; j < sg.size(); ++j) {
    const ScalarField c = pullback(out.family[j], coeff[static_cast<std::size_t>(j)]);
    ScalarField u(c.grid());
    for (std::size_t p = 0; p < c.points(); ++p) {
      out.min_coefficient = std::min(out.min_coefficient, c[p]);
      u[p] = c[p] > 0.0 ? 1.0 / std::sqrt(c[p]) : 0.0;
    }
    out.metric.u.samples.push_back(std::move(u));
    const MetricField m(pp.g[j]);
    out.metric.g.samples.push_back(pullback(out.family[j], pp.g[j]));
    out.metric.g.derivative->push_back(pullback(out.family[j], grate[j] + lie_metric(m, gen[j])));
  }
  if (!(out.min_coefficient > 0.0)) {
    std::ostringstream os;
    os << "new hypersurfaces are not spacelike: min ds^2 coefficient " << out.min_coefficient;
    throw PreconditionError(Stage::geometry, os.str());
  }
  return out;
}

struct GeodesicOptions {
  int substeps = 4;           // RK4 steps per s-interval
  double blowup = 10.0;       // sup |df| treated as breakdown
  HypersurfaceOptions change{};
};

struct GeodesicGauge {
  ScalarCurve f;  // with its s-derivative
  HypersurfaceChange change;
  double max_df = 0.0;
  double lapse_deviation = 0.0;  // sup |u' - 1|
  double ode_residual = 0.0;     // sup |finite-difference fdot - rhs|
};

/// Solves 2 df/ds = 1 - u^{-2} + |df|^2 from f = f0 at the anchor and changes
/// hypersurface so the new lapse is 1. Throws with the surviving s-range if
/// |df| exceeds the blow-up threshold.
inline GeodesicGauge geodesic_gauge(const PPWaveMetric& pp, const std::optional<ScalarField>& f0 = std::nullopt,
                                    const GeodesicOptions& opt = {}) {
  pp.validate();
  const SGrid& sg = pp.sgrid;
  const TorusGrid& grid = pp.grid();
  std::vector<ScalarField> w;
  for (int j = 0; j < sg.size(); ++j) w.push_back(lapse_coefficient(pp.u[j]));
  const int anchor = detail::anchor_index(sg, opt.change.anchor.value_or(sg.start()));

  double max_df = 0.0;
  auto rate = [&](double s, const ScalarField& f) {
    const MetricField m(lagrange_eval(sg, pp.g.samples, s, 4));
    ScalarField r = norm_sq(m, differential(f));
    for (double v : r.raw()) max_df = std::max(max_df, std::sqrt(v));
    const ScalarField ws = lagrange_eval(sg, w, s, 4);
    for (std::size_t p = 0; p < r.points(); ++p) r[p] = 0.5 * (1.0 - ws[p] + r[p]);
    return r;
  };

  ScalarCurve f{sg, std::vector<ScalarField>(static_cast<std::size_t>(sg.size()), ScalarField(grid)),
                std::vector<ScalarField>(static_cast<std::size_t>(sg.size()), ScalarField(grid))};
  const ScalarField start = f0.value_or(ScalarField(grid));
  require_same_grid(start.grid(), grid);
  f.samples[static_cast<std::size_t>(anchor)] = start;
  double lo = sg.at(anchor), hi = sg.at(anchor);
  for (int dir : {1, -1}) {
    ScalarField y = start;
    const double h = dir * sg.step() / opt.substeps;
    for (int j = anchor; j + dir >= 0 && j + dir < sg.size(); j += dir) {
      double s = sg.at(j);
      for (int k = 0; k < opt.substeps; ++k) {
        const ScalarField k1 = rate(s, y);
        ScalarField t = y;
        t.axpy(0.5 * h, k1);
        const ScalarField k2 = rate(s + 0.5 * h, t);
        t = y;
        t.axpy(0.5 * h, k2);
        const ScalarField k3 = rate(s + 0.5 * h, t);
        t = y;
        t.axpy(h, k3);
        const ScalarField k4 = rate(s + h, t);
        y.axpy(h / 6.0, k1);
        y.axpy(h / 3.0, k2);
        y.axpy(h / 3.0, k3);
        y.axpy(h / 6.0, k4);
        s += h;
        if (!(max_df <= opt.blowup)) {
          std::ostringstream os;
          os << "geodesic gauge breaks down near s = " << s << " (|df| > " << opt.blowup
             << "); solution exists on [" << lo << ", " << hi << "]";
          throw NumericalError(Stage::geometry, os.str());
        }
      }
      f.samples[static_cast<std::size_t>(j + dir)] = y;
      (dir > 0 ? hi : lo) = sg.at(j + dir);
    }
  }
  for (int j = 0; j < sg.size(); ++j) (*f.derivative)[static_cast<std::size_t>(j)] = rate(sg.at(j), f[j]);
  double ode = 0.0;
  const auto fd = fd_derivative(f.samples, sg.step());
  for (int j = 0; j < sg.size(); ++j)
    ode = std::max(ode, (fd[static_cast<std::size_t>(j)] - (*f.derivative)[static_cast<std::size_t>(j)]).max_abs());

  HypersurfaceOptions ch = opt.change;
  ch.anchor = sg.at(anchor);
  auto change = change_hypersurface(pp, f, ch);
  GeodesicGauge out{std::move(f), std::move(change), max_df, 0.0, ode};
  for (const auto& u : out.change.metric.u.samples)
    for (double v : u.raw()) out.lapse_deviation = std::max(out.lapse_deviation, std::abs(v - 1.0));
  return out;
}

}  // namespace ppw
