#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "ppw/elliptic.hpp"
#include "ppw/error.hpp"
#include "ppw/parallel.hpp"
#include "ppw/riemann.hpp"
#include "ppw/torus_fields.hpp"

namespace ppw {

using VectorCurve = FieldCurve<VectorField>;

/// Torus diffeomorphism isotopic to the identity, phi(x) = x + D(x) with D
/// periodic.
class Diffeo {
 public:
  explicit Diffeo(const TorusGrid& grid) : disp_(grid) {}
  explicit Diffeo(VectorField displacement) : disp_(std::move(displacement)) {}

  static Diffeo translation(const TorusGrid& grid, const Point& a) {
    VectorField d(grid);
    for (std::size_t p = 0; p < grid.size(); ++p)
      for (int c = 0; c < grid.dim(); ++c) d(c, p) = a[static_cast<std::size_t>(c)];
    return Diffeo(std::move(d));
  }

  const TorusGrid& grid() const { return disp_.grid(); }
  const VectorField& displacement() const { return disp_; }

  /// phi(x_p), not wrapped into the unit cell.
  Point image(std::size_t p) const {
    Point x = grid().coordinate(p);
    for (int c = 0; c < grid().dim(); ++c) x[static_cast<std::size_t>(c)] += disp_(c, p);
    return x;
  }

  std::vector<Point> images() const {
    std::vector<Point> out(grid().size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = image(p);
    return out;
  }

  /// d phi^a / d x^i at every grid point.
  std::vector<SmallMat> jacobian() const {
    const int d = grid().dim();
    std::vector<std::vector<std::vector<double>>> dd;
    for (int a = 0; a < d; ++a) dd.push_back(gradient_components(grid(), disp_.component(a)));
    std::vector<SmallMat> out(grid().size());
    for (std::size_t p = 0; p < out.size(); ++p) {
      SmallMat J = SmallMat::Identity(d, d);
      for (int a = 0; a < d; ++a)
        for (int i = 0; i < d; ++i) J(a, i) += dd[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)][p];
      out[p] = J;
    }
    return out;
  }

  /// Solves phi(z) = y by the fixed point z <- y - D(z).
  Diffeo inverse(int iterations = 20) const {
    const TorusGrid& g = grid();
    const int d = g.dim();
    VectorField e(g);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (int c = 0; c < d; ++c) e(c, p) = -disp_(c, p);
    std::vector<Point> z(g.size());
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t p = 0; p < g.size(); ++p) {
        z[p] = g.coordinate(p);
        for (int c = 0; c < d; ++c) z[p][static_cast<std::size_t>(c)] += e(c, p);
      }
      const auto dz = interpolate(disp_, z);
      double change = 0.0;
      for (std::size_t p = 0; p < g.size(); ++p)
        for (int c = 0; c < d; ++c) {
          const double v = -dz[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)];
          change = std::max(change, std::abs(v - e(c, p)));
          e(c, p) = v;
        }
      if (change < 1e-15) break;
    }
    return Diffeo(std::move(e));
  }

 private:
  VectorField disp_;
};

/// (phi o psi)(x) = phi(psi(x)).
inline Diffeo compose(const Diffeo& phi, const Diffeo& psi) {
  require_same_grid(phi.grid(), psi.grid());
  const int d = phi.grid().dim();
  const auto at = interpolate(phi.displacement(), psi.images());
  VectorField out = psi.displacement();
  for (std::size_t p = 0; p < out.points(); ++p)
    for (int c = 0; c < d; ++c) out(c, p) += at[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)];
  return Diffeo(std::move(out));
}

/// sup |phi(phi_inv(y)) - y|.
inline double inverse_residual(const Diffeo& phi, const Diffeo& phi_inv) {
  return compose(phi, phi_inv).displacement().max_abs();
}

/// phi^* of a field; Jacobians from spectral derivatives of the displacement.
template <FieldKind K>
Field<K> pullback(const Diffeo& phi, const Field<K>& field) {
  require_same_grid(phi.grid(), field.grid());
  const TorusGrid& g = field.grid();
  const int d = g.dim();
  const auto nc = static_cast<std::size_t>(field.components());
  const auto at = interpolate(field, phi.images());
  Field<K> out(g);
  if constexpr (K == FieldKind::scalar) {
    for (std::size_t p = 0; p < g.size(); ++p) out[p] = at[p];
  } else {
    const auto J = phi.jacobian();
    parallel::for_each_index(g.size(), [&](std::size_t p) {
      const double* v = at.data() + p * nc;
      if constexpr (K == FieldKind::covector) {
        for (int i = 0; i < d; ++i) {
          double acc = 0.0;
          for (int a = 0; a < d; ++a) acc += J[p](a, i) * v[a];
          out(i, p) = acc;
        }
      } else if constexpr (K == FieldKind::vector) {
        SmallVec x(d);
        for (int a = 0; a < d; ++a) x(a) = v[a];
        const SmallVec y = J[p].partialPivLu().solve(x);
        for (int i = 0; i < d; ++i) out(i, p) = y(i);
      } else {
        SmallMat h(d, d);
        for (int a = 0; a < d; ++a)
          for (int b = a; b < d; ++b) h(a, b) = h(b, a) = v[sym_index(a, b, d)];
        store_matrix(out, p, J[p].transpose() * h * J[p]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Families generated by s-dependent vector fields
// ---------------------------------------------------------------------------

struct FlowOptions {
  int inverse_iterations = 20;
  bool richardson = true;  // rerun with half steps and report the difference
};

struct DiffeoFamily {
  SGrid sgrid;
  int anchor = 0;
  std::vector<Diffeo> maps;
  std::vector<Diffeo> inverses;
  VectorCurve generator;
  double flow_error = 0.0;        // Richardson estimate, sup over samples
  double inverse_residual = 0.0;  // sup over samples of |phi o phi^{-1} - id|

  const Diffeo& operator[](int j) const { return maps[static_cast<std::size_t>(j)]; }
  int size() const { return static_cast<int>(maps.size()); }
};

namespace detail {

inline int anchor_index(const SGrid& sg, double anchor_s) {
  const int j = sg.nearest(anchor_s);
  if (std::abs(sg.at(j) - anchor_s) > 1e-9 * std::max(1.0, sg.step()))
    throw PreconditionError(Stage::gauge, "flow anchor must be an s-sample");
  return j;
}

/// Displacements at each sample from RK4 with `sub` steps per s-interval.
inline std::vector<VectorField> march_flow(const VectorCurve& gen, int anchor, int sub) {
  const SGrid& sg = gen.sgrid;
  const TorusGrid& grid = gen.samples.front().grid();
  const int d = grid.dim();
  const auto ud = static_cast<std::size_t>(d);
  auto velocity = [&](double s, const VectorField& disp) {
    const VectorField x = lagrange_eval(sg, gen.samples, s, 4);
    std::vector<Point> pts(grid.size());
    for (std::size_t p = 0; p < pts.size(); ++p) {
      pts[p] = grid.coordinate(p);
      for (int c = 0; c < d; ++c) pts[p][static_cast<std::size_t>(c)] += disp(c, p);
    }
    const auto v = interpolate(x, pts);
    VectorField out(grid);
    for (std::size_t p = 0; p < pts.size(); ++p)
      for (int c = 0; c < d; ++c) out(c, p) = v[p * ud + static_cast<std::size_t>(c)];
    return out;
  };
  std::vector<VectorField> out(static_cast<std::size_t>(sg.size()), VectorField(grid));
  for (int dir : {1, -1}) {
    VectorField y(grid);
    const double h = dir * sg.step() / sub;
    for (int j = anchor; j + dir >= 0 && j + dir < sg.size(); j += dir) {
      double s = sg.at(j);
      for (int k = 0; k < sub; ++k) {
        const VectorField k1 = velocity(s, y);
        VectorField t = y;
        t.axpy(0.5 * h, k1);
        const VectorField k2 = velocity(s + 0.5 * h, t);
        t = y;
        t.axpy(0.5 * h, k2);
        const VectorField k3 = velocity(s + 0.5 * h, t);
        t = y;
        t.axpy(h, k3);
        const VectorField k4 = velocity(s + h, t);
        y.axpy(h / 6.0, k1);
        y.axpy(h / 3.0, k2);
        y.axpy(h / 3.0, k3);
        y.axpy(h / 6.0, k4);
        s += h;
      }
      out[static_cast<std::size_t>(j + dir)] = y;
    }
  }
  return out;
}

}  // namespace detail

/// Integrates d/ds phi_s = X_s o phi_s with phi = id at the anchor sample.
inline DiffeoFamily integrate_flow(const VectorCurve& generator, double anchor_s, const FlowOptions& opt = {}) {
  generator.validate();
  DiffeoFamily fam{generator.sgrid, detail::anchor_index(generator.sgrid, anchor_s), {}, {}, generator, 0.0, 0.0};
  auto coarse = detail::march_flow(generator, fam.anchor, 1);
  std::vector<VectorField> fine;
  if (opt.richardson) {
    fine = detail::march_flow(generator, fam.anchor, 2);
    for (std::size_t j = 0; j < fine.size(); ++j)
      fam.flow_error = std::max(fam.flow_error, (fine[j] - coarse[j]).max_abs() / 15.0);
  } else {
    fine = std::move(coarse);
  }
  for (auto& d : fine) {
    fam.maps.emplace_back(std::move(d));
    fam.inverses.push_back(fam.maps.back().inverse(opt.inverse_iterations));
    fam.inverse_residual =
        std::max(fam.inverse_residual, inverse_residual(fam.maps.back(), fam.inverses.back()));
  }
  return fam;
}

/// Samplewise pullback phi_s^* of a curve; derivative samples are pulled back
/// as given (the caller supplies the generator correction when needed).
template <class F>
FieldCurve<F> pullback(const DiffeoFamily& fam, const FieldCurve<F>& curve) {
  curve.validate();
  if (!(curve.sgrid == fam.sgrid)) throw PreconditionError(Stage::gauge, "curve and family use different s-grids");
  FieldCurve<F> out{curve.sgrid, {}, std::nullopt};
  for (int j = 0; j < curve.size(); ++j) out.samples.push_back(pullback(fam[j], curve[j]));
  return out;
}

// ---------------------------------------------------------------------------
// Divergence-free gauge
// ---------------------------------------------------------------------------

struct GaugeOptions {
  CgOptions cg{1e-12, 0};
  FlowOptions flow{};
  double volume_tol = 1e-8;
  std::optional<double> anchor;  // defaults to the first sample
};

struct GaugedCurve {
  MetricCurve curve;  // phi_s^* g_s with derivative phi_s^*(gdot_s + L_X g_s)
  DiffeoFamily family;
  double divergence_residual = 0.0;  // sup_s |div gdot~|
  double trace_residual = 0.0;       // sup_s |tr gdot~|
};

inline void require_unit_volume(const MetricCurve& curve, double tol) {
  for (int j = 0; j < curve.size(); ++j) {
    const double v = MetricField(curve[j]).volume();
    if (std::abs(v - 1.0) > tol) {
      std::ostringstream os;
      os << "curve is not unit volume: vol = " << v << " at s = " << curve.sgrid.at(j);
      throw PreconditionError(Stage::gauge, os.str());
    }
  }
}

/// div^{g_s}(gdot_s + L_X g_s) = 0 per sample, X L2-orthogonal to Killing fields.
inline VectorCurve gauge_generator(const MetricCurve& curve, const CgOptions& cg = {}) {
  const auto rate = s_derivative(curve);
  VectorCurve gen{curve.sgrid, {}, std::nullopt};
  gen.samples.resize(static_cast<std::size_t>(curve.size()));
  for (int j = 0; j < curve.size(); ++j) {
    const MetricField m(curve[j]);
    gen.samples[static_cast<std::size_t>(j)] = solve_gauge_generator(m, rate[j], killing_fields(m, cg), cg);
  }
  return gen;
}

inline GaugedCurve make_divergence_free(const MetricCurve& curve, const GaugeOptions& opt = {}) {
  curve.validate();
  require_unit_volume(curve, opt.volume_tol);
  const auto rate = s_derivative(curve);
  VectorCurve gen = gauge_generator(curve, opt.cg);
  GaugedCurve out{MetricCurve{curve.sgrid, {}, std::vector<SymTensorField>{}},
                  integrate_flow(gen, opt.anchor.value_or(curve.sgrid.start()), opt.flow), 0.0, 0.0};
  for (int j = 0; j < curve.size(); ++j) {
    const MetricField m(curve[j]);
    SymTensorField h = rate[j] + lie_metric(m, gen[j]);
    out.curve.samples.push_back(pullback(out.family[j], curve[j]));
    out.curve.derivative->push_back(pullback(out.family[j], h));
    const MetricField mt(out.curve.samples.back());
    out.divergence_residual =
        std::max(out.divergence_residual, divergence(mt, out.curve.derivative->back()).max_abs());
    out.trace_residual = std::max(out.trace_residual, trace(mt, out.curve.derivative->back()).max_abs());
  }
  return out;
}

}  // namespace ppw
