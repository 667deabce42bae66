#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "ppw/elliptic.hpp"
#include "ppw/error.hpp"
#include "ppw/parallel.hpp"
#include "ppw/riemann.hpp"
#include "ppw/scale_ode.hpp"
#include "ppw/torus_fields.hpp"

namespace ppw {

/// lambda and its derivatives on the metric's samples, with the unit-volume
/// base curve; the spatial metric is lambda^2 times the base.
struct ScaleStructure {
  std::vector<double> lambda;
  std::vector<double> lambda_dot;
  std::vector<double> lambda_ddot;
  MetricCurve base;
};

/// dv ds + ds dv + u^{-2} ds^2 + g_s on R x I x T^d.
struct PPWaveMetric {
  SGrid sgrid;
  ScalarCurve u;
  MetricCurve g;
  std::optional<ScaleStructure> scale;

  int dim() const { return g.samples.front().grid().dim(); }
  const TorusGrid& grid() const { return g.samples.front().grid(); }
  int size() const { return sgrid.size(); }

  void validate() const {
    u.validate();
    g.validate();
    if (!(u.sgrid == sgrid) || !(g.sgrid == sgrid)) throw PreconditionError(Stage::geometry, "ppwave curves use different s-grids");
    for (int j = 0; j < size(); ++j) {
      require_same_grid(u[j].grid(), g[j].grid());
      for (double v : u[j].raw())
        if (!(v > 0.0) || !std::isfinite(v)) {
          std::ostringstream os;
          os << "lapse must be positive; found " << v << " at s = " << sgrid.at(j);
          throw PreconditionError(Stage::geometry, os.str());
        }
      MetricField check(g[j]);
    }
  }
};

inline PPWaveMetric product_metric(const SGrid& sg, const SymTensorField& g) {
  PPWaveMetric pp{sg, ScalarCurve{sg, {}, std::nullopt}, MetricCurve{sg, {}, std::vector<SymTensorField>{}}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    pp.u.samples.emplace_back(g.grid(), 1.0);
    pp.g.samples.push_back(g);
    pp.g.derivative->emplace_back(g.grid());
  }
  return pp;
}

/// Inverse square lapse u^{-2} at one sample.
inline ScalarField lapse_coefficient(const ScalarField& u) {
  ScalarField w(u.grid());
  for (std::size_t p = 0; p < w.points(); ++p) w[p] = 1.0 / (u[p] * u[p]);
  return w;
}

// ---------------------------------------------------------------------------
// Closed-form Ricci blocks
// ---------------------------------------------------------------------------

struct RicciBlocks {
  SGrid sgrid;
  std::vector<SymTensorField> spatial;  // ric_ij = ric(g_s)
  std::vector<CovectorField> mixed;     // ric_si = (div gdot - d tr gdot) / 2
  ScalarCurve rho;                      // ric_ss

  double max_spatial() const {
    double m = 0.0;
    for (const auto& f : spatial) m = std::max(m, f.max_abs());
    return m;
  }
  double max_mixed() const {
    double m = 0.0;
    for (const auto& f : mixed) m = std::max(m, f.max_abs());
    return m;
  }
};

inline RicciBlocks ricci_closed_form(const PPWaveMetric& pp, int fd_order = 4) {
  pp.validate();
  const int d = pp.dim();
  const int m = pp.size();
  RicciBlocks out{pp.sgrid, {}, {}, ScalarCurve{pp.sgrid, {}, std::nullopt}};
  const auto rate = s_derivative(pp.g, fd_order);

  std::optional<MetricCurve> base_rate;
  if (pp.scale) base_rate = s_derivative(pp.scale->base, fd_order);
  // trace of the metric rate: of the base when a scale structure is present
  std::vector<ScalarField> tr_rate;
  for (int j = 0; j < m; ++j) {
    if (pp.scale) tr_rate.push_back(trace(MetricField(pp.scale->base[j]), (*base_rate)[j]));
    else tr_rate.push_back(trace(MetricField(pp.g[j]), rate[j]));
  }
  const auto dtr = fd_derivative(tr_rate, pp.sgrid.step(), fd_order);

  for (int j = 0; j < m; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const MetricField mg(pp.g[j]);
    out.spatial.push_back(ricci(mg));
    CovectorField mix = divergence(mg, rate[j]);
    mix -= differential(trace(mg, rate[j]));
    mix *= 0.5;
    out.mixed.push_back(std::move(mix));

    ScalarField rho = laplacian(mg, lapse_coefficient(pp.u[j]));
    rho *= 0.5;
    if (pp.scale) {
      const auto& sc = *pp.scale;
      const double l = sc.lambda[uj], ld = sc.lambda_dot[uj], ldd = sc.lambda_ddot[uj];
      const MetricField mb(sc.base[j]);
      const ScalarField nb = norm_sq(mb, (*base_rate)[j]);
      for (std::size_t p = 0; p < rho.points(); ++p) {
        rho[p] -= 0.5 * (2.0 * d * (ldd / l - ld * ld / (l * l)) + dtr[uj][p]);
        rho[p] -= 0.25 * (4.0 * d * ld * ld / (l * l) + 4.0 * (ld / l) * tr_rate[uj][p] + nb[p]);
      }
    } else {
      const ScalarField n2 = norm_sq(mg, rate[j]);
      for (std::size_t p = 0; p < rho.points(); ++p) rho[p] -= 0.5 * dtr[uj][p] + 0.25 * n2[p];
    }
    out.rho.samples.push_back(std::move(rho));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference curvature oracle
// ---------------------------------------------------------------------------

namespace detail {

/// Values of several spectra at one point.
inline std::vector<double> eval_spectra(const TorusGrid& g, const std::vector<std::vector<cplx>>& spectra, const Point& x) {
  const int n = g.points();
  const int d = g.dim();
  const std::array<Point, 1> pt{x};
  std::array<Eigen::VectorXcd, 3> w;
  for (int a = 0; a < d; ++a) w[static_cast<std::size_t>(a)] = axis_weights(n, pt, a).col(0);
  using RowMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::vector<double> out(spectra.size());
  for (std::size_t c = 0; c < spectra.size(); ++c) {
    Eigen::Map<const RowMat> co(spectra[c].data(), static_cast<Eigen::Index>(g.size() / static_cast<std::size_t>(n)), n);
    const Eigen::VectorXcd r = co * w[static_cast<std::size_t>(d - 1)];
    cplx total;
    if (d == 1) {
      total = r(0);
    } else if (d == 2) {
      total = (w[0].transpose() * r)(0);
    } else {
      Eigen::Map<const RowMat> rr(r.data(), n, n);
      total = (w[0].transpose() * rr * w[1])(0);
    }
    out[c] = total.real();
  }
  return out;
}

}  // namespace detail

/// Continuous evaluation of the block metric: Lagrange in s, trigonometric in x.
/// Coordinates are (v, s, x^1 .. x^d).
class PPWaveEvaluator {
 public:
  using Slice = std::vector<std::vector<cplx>>;

  explicit PPWaveEvaluator(const PPWaveMetric& pp, int order = 8) : pp_(pp), order_(order) {
    for (int j = 0; j < pp.size(); ++j) {
      Slice sl;
      const ScalarField w = lapse_coefficient(pp.u[j]);
      sl.push_back(Spectrum(pp.grid(), w.component(0)).coefficients());
      for (int c = 0; c < pp.g[j].components(); ++c) sl.push_back(Spectrum(pp.grid(), pp.g[j].component(c)).coefficients());
      slices_.push_back(std::move(sl));
    }
  }

  int dim() const { return pp_.dim() + 2; }
  const PPWaveMetric& metric_data() const { return pp_; }

  /// Spectra of (u^{-2}, g) Lagrange-interpolated to s.
  Slice slice(double s) const {
    auto [first, w] = lagrange_weights(pp_.sgrid, s, order_);
    Slice out(slices_.front().size(), std::vector<cplx>(pp_.grid().size(), 0.0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Slice& src = slices_[static_cast<std::size_t>(first) + i];
      for (std::size_t c = 0; c < out.size(); ++c)
        for (std::size_t p = 0; p < out[c].size(); ++p) out[c][p] += w[i] * src[c][p];
    }
    return out;
  }

  Eigen::MatrixXd metric(const Slice& sl, const Point& x) const {
    const int d = pp_.dim();
    const auto v = detail::eval_spectra(pp_.grid(), sl, x);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d + 2, d + 2);
    G(0, 1) = G(1, 0) = 1.0;
    G(1, 1) = v[0];
    for (int i = 0; i < d; ++i)
      for (int k = i; k < d; ++k) G(2 + i, 2 + k) = G(2 + k, 2 + i) = v[1 + static_cast<std::size_t>(sym_index(i, k, d))];
    return G;
  }

  Eigen::MatrixXd metric(double s, const Point& x) const { return metric(slice(s), x); }

 private:
  const PPWaveMetric& pp_;
  int order_;
  std::vector<Slice> slices_;
};

struct OracleOptions {
  double h = 1e-3;
  int x_stride = 4;
  int s_stride = 10;
  double max_gap = 1e-2;  // Richardson disagreement treated as breakdown
  std::optional<std::pair<double, double>> window;  // restrict to these s
};

struct OracleSample {
  int j = 0;           // s-sample index
  std::size_t p = 0;   // grid point
  double s = 0.0;
  Eigen::MatrixXd metric;
  Eigen::MatrixXd ricci;
  std::vector<double> riemann;  // R^a_{bcd}, index ((a D + b) D + c) D + d
  double gap = 0.0;             // |R(h/2) - R(h)| before extrapolation

  double riemann_up(int a, int b, int c, int d) const {
    const int D = static_cast<int>(metric.rows());
    return riemann[static_cast<std::size_t>(((a * D + b) * D + c) * D + d)];
  }
  /// R_{abcd} = g_{ae} R^e_{bcd}
  double riemann_down(int a, int b, int c, int d) const {
    double acc = 0.0;
    for (int e = 0; e < metric.rows(); ++e) acc += metric(a, e) * riemann_up(e, b, c, d);
    return acc;
  }
};

namespace detail {

struct FdCurvature {
  std::vector<double> riemann;
  Eigen::MatrixXd ricci;
};

/// Central-difference curvature at (s, x) with step h, reusing slice spectra.
inline FdCurvature fd_curvature(const PPWaveEvaluator& ev, const std::map<double, PPWaveEvaluator::Slice>& slices,
                                double s, const Point& x, double h) {
  const int D = ev.dim();
  const auto uD = static_cast<std::size_t>(D);
  auto metric_at = [&](double ss, const Point& xx) {
    auto it = slices.lower_bound(ss - 1e-9 * h);
    if (it == slices.end() || std::abs(it->first - ss) > 1e-9 * h)
      throw NumericalError(Stage::oracle, "oracle stencil left its cached s-slices");
    return ev.metric(it->second, xx);
  };
  auto shift = [&](int mu, double amount, double& ss, Point& xx) {
    if (mu == 1) ss += amount;
    else xx[static_cast<std::size_t>(mu - 2)] += amount;
  };
  // Gamma^a_{bc} at (ss, xx), flat index (a D + b) D + c
  auto christoffel = [&](double ss, const Point& xx) {
    std::vector<Eigen::MatrixXd> dg(uD, Eigen::MatrixXd::Zero(D, D));
    for (int mu = 1; mu < D; ++mu) {
      double sp = ss, sm = ss;
      Point xp = xx, xm = xx;
      shift(mu, h, sp, xp);
      shift(mu, -h, sm, xm);
      dg[static_cast<std::size_t>(mu)] = (metric_at(sp, xp) - metric_at(sm, xm)) / (2 * h);
    }
    const Eigen::MatrixXd gi = metric_at(ss, xx).inverse();
    std::vector<double> G(uD * uD * uD, 0.0);
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b)
        for (int c = b; c < D; ++c) {
          double acc = 0.0;
          for (int e = 0; e < D; ++e)
            acc += gi(a, e) * (dg[static_cast<std::size_t>(b)](e, c) + dg[static_cast<std::size_t>(c)](e, b) -
                               dg[static_cast<std::size_t>(e)](b, c));
          G[(static_cast<std::size_t>(a) * uD + static_cast<std::size_t>(b)) * uD + static_cast<std::size_t>(c)] = 0.5 * acc;
          G[(static_cast<std::size_t>(a) * uD + static_cast<std::size_t>(c)) * uD + static_cast<std::size_t>(b)] = 0.5 * acc;
        }
    return G;
  };
  auto idx = [&](int a, int b, int c) {
    return (static_cast<std::size_t>(a) * uD + static_cast<std::size_t>(b)) * uD + static_cast<std::size_t>(c);
  };
  const auto G0 = christoffel(s, x);
  std::vector<std::vector<double>> dG(uD, std::vector<double>(G0.size(), 0.0));
  for (int mu = 1; mu < D; ++mu) {
    double sp = s, sm = s;
    Point xp = x, xm = x;
    shift(mu, h, sp, xp);
    shift(mu, -h, sm, xm);
    const auto Gp = christoffel(sp, xp);
    const auto Gm = christoffel(sm, xm);
    for (std::size_t i = 0; i < G0.size(); ++i) dG[static_cast<std::size_t>(mu)][i] = (Gp[i] - Gm[i]) / (2 * h);
  }
  FdCurvature out{std::vector<double>(uD * uD * uD * uD, 0.0), Eigen::MatrixXd::Zero(D, D)};
  for (int a = 0; a < D; ++a)
    for (int b = 0; b < D; ++b)
      for (int c = 0; c < D; ++c)
        for (int d = 0; d < D; ++d) {
          double r = dG[static_cast<std::size_t>(c)][idx(a, d, b)] - dG[static_cast<std::size_t>(d)][idx(a, c, b)];
          for (int e = 0; e < D; ++e) r += G0[idx(a, c, e)] * G0[idx(e, d, b)] - G0[idx(a, d, e)] * G0[idx(e, c, b)];
          out.riemann[idx(a, b, c) * uD + static_cast<std::size_t>(d)] = r;
        }
  for (int b = 0; b < D; ++b)
    for (int d = 0; d < D; ++d) {
      double r = 0.0;
      for (int a = 0; a < D; ++a) r += out.riemann[idx(a, b, a) * uD + static_cast<std::size_t>(d)];
      out.ricci(b, d) = r;
    }
  return out;
}

}  // namespace detail

/// Brute-force curvature of the block metric on a sub-lattice of (s, x)
/// samples: nested central differences with one Richardson step.
inline std::vector<OracleSample> ricci_fd_oracle(const PPWaveMetric& pp, const OracleOptions& opt = {}) {
  pp.validate();
  const PPWaveEvaluator ev(pp);
  const SGrid& sg = pp.sgrid;
  const TorusGrid& grid = pp.grid();
  std::vector<int> js;
  for (int j = 1; j < sg.size() - 1; j += std::max(1, opt.s_stride))
    if (sg.at(j) - 2 * opt.h > sg.start() && sg.at(j) + 2 * opt.h < sg.end() &&
        (!opt.window || (sg.at(j) >= opt.window->first && sg.at(j) <= opt.window->second)))
      js.push_back(j);
  if (js.empty()) throw PreconditionError(Stage::oracle, "no interior s-samples for the oracle stencil");
  std::vector<std::size_t> ps;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const auto mi = grid.multi_index(p);
    bool keep = true;
    for (int a = 0; a < grid.dim(); ++a) keep = keep && mi[static_cast<std::size_t>(a)] % opt.x_stride == 0;
    if (keep) ps.push_back(p);
  }
  std::vector<OracleSample> out;
  for (int j : js) {
    const double s = sg.at(j);
    std::map<double, PPWaveEvaluator::Slice> slices;
    for (double k : {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0}) slices.emplace(s + k * opt.h, ev.slice(s + k * opt.h));
    std::vector<OracleSample> block(ps.size());
    parallel::for_each_index(ps.size(), [&](std::size_t i) {
      const Point x = grid.coordinate(ps[i]);
      const auto coarse = detail::fd_curvature(ev, slices, s, x, opt.h);
      const auto fine = detail::fd_curvature(ev, slices, s, x, 0.5 * opt.h);
      OracleSample o;
      o.j = j;
      o.p = ps[i];
      o.s = s;
      o.metric = ev.metric(slices.at(s), x);
      o.riemann.resize(coarse.riemann.size());
      for (std::size_t k = 0; k < o.riemann.size(); ++k) {
        o.riemann[k] = (4.0 * fine.riemann[k] - coarse.riemann[k]) / 3.0;
        o.gap = std::max(o.gap, std::abs(fine.riemann[k] - coarse.riemann[k]));
      }
      o.ricci = (4.0 * fine.ricci - coarse.ricci) / 3.0;
      block[i] = std::move(o);
    });
    for (auto& o : block) {
      if (!(o.gap < opt.max_gap)) {
        std::ostringstream os;
        os << "finite-difference oracle lost accuracy at s = " << o.s << ": Richardson gap " << o.gap;
        throw NumericalError(Stage::oracle, os.str());
      }
      out.push_back(std::move(o));
    }
  }
  return out;
}

struct RicciComparison {
  double ss = 0.0;          // |ric_ss - rho|
  double mixed = 0.0;       // |ric_si - closed form|
  double spatial = 0.0;     // |ric_ij - ric(g_s)|
  double null_blocks = 0.0;  // |ric_vv|, |ric_vs|, |ric_vi|
  double max_ss = 0.0;       // |ric_ss| itself
  double max_mixed = 0.0;
  double max_spatial = 0.0;
  double gap = 0.0;
  std::size_t points = 0;

  double worst() const { return std::max({ss, mixed, spatial, null_blocks}); }
};

inline RicciComparison compare_ricci(const RicciBlocks& cf, const std::vector<OracleSample>& samples) {
  RicciComparison r;
  for (const auto& o : samples) {
    const int D = static_cast<int>(o.ricci.rows());
    const int d = D - 2;
    const auto j = static_cast<std::size_t>(o.j);
    r.ss = std::max(r.ss, std::abs(o.ricci(1, 1) - cf.rho.samples[j][o.p]));
    r.max_ss = std::max(r.max_ss, std::abs(o.ricci(1, 1)));
    for (int a = 0; a < D; ++a) r.null_blocks = std::max(r.null_blocks, std::abs(o.ricci(0, a)));
    for (int i = 0; i < d; ++i) {
      r.mixed = std::max(r.mixed, std::abs(o.ricci(1, 2 + i) - cf.mixed[j](i, o.p)));
      r.max_mixed = std::max(r.max_mixed, std::abs(o.ricci(1, 2 + i)));
      for (int k = 0; k < d; ++k) {
        r.spatial = std::max(r.spatial, std::abs(o.ricci(2 + i, 2 + k) - cf.spatial[j].at(i, k, o.p)));
        r.max_spatial = std::max(r.max_spatial, std::abs(o.ricci(2 + i, 2 + k)));
      }
    }
    r.gap = std::max(r.gap, o.gap);
    ++r.points;
  }
  return r;
}

/// Full Ricci residual for a null-Ricci target: every component of ric - rho ds^2.
inline double null_ricci_residual(const std::vector<OracleSample>& samples, const ScalarCurve* rho) {
  double r = 0.0;
  for (const auto& o : samples) {
    Eigen::MatrixXd res = o.ricci;
    if (rho) res(1, 1) -= rho->samples[static_cast<std::size_t>(o.j)][o.p];
    r = std::max(r, res.cwiseAbs().maxCoeff());
  }
  return r;
}

struct CurvatureVanishing {
  double full = 0.0;    // max |R(W, X, Y, Z)| with X, Y, Z orthogonal to d/dv
  double traced = 0.0;  // max |sum_i R(e_i, nu, e_i, Z)|
};

inline CurvatureVanishing curvature_vanishing_check(const std::vector<OracleSample>& samples, const PPWaveMetric& pp) {
  CurvatureVanishing r;
  for (const auto& o : samples) {
    const int D = static_cast<int>(o.metric.rows());
    const int d = D - 2;
    std::vector<int> perp{0};
    for (int i = 0; i < d; ++i) perp.push_back(2 + i);
    for (int a = 0; a < D; ++a)
      for (int b : perp)
        for (int c : perp)
          for (int e : perp) r.full = std::max(r.full, std::abs(o.riemann_down(a, b, c, e)));
    const Eigen::MatrixXd gi = o.metric.bottomRightCorner(d, d).inverse();
    const double u = pp.u[o.j][o.p];
    for (int k = 0; k < d; ++k) {
      double t = 0.0;
      for (int i = 0; i < d; ++i)
        for (int l = 0; l < d; ++l) t += gi(i, l) * o.riemann_down(2 + i, 1, 2 + l, 2 + k);
      r.traced = std::max(r.traced, std::abs(u * t));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Initial data sets and Killing development
// ---------------------------------------------------------------------------

/// gamma = u^{-2} ds^2 + g_s on I x T^d, second fundamental form k in the
/// coordinates (s, x), and U = -u^2 d/ds.
struct InitialDataSet {
  SGrid sgrid;
  ScalarCurve u;
  MetricCurve g;
  ScalarCurve k_ss;
  FieldCurve<CovectorField> k_si;
  MetricCurve k_ij;
  double asymmetry = 0.0;  // sup |k_ab - k_ba| before symmetrization
};

namespace detail {

/// (d+1)-dimensional metric gamma at grid point p with its first derivatives,
/// coordinates (s, x).
struct GammaJet {
  SmallMat gamma;
  std::vector<SmallMat> d;  // d[mu] = partial_mu gamma

  /// Gamma^l_{mu nu}
  double christoffel(const SmallMat& inv, int l, int mu, int nu) const {
    double v = 0.0;
    for (int e = 0; e < gamma.rows(); ++e)
      v += 0.5 * inv(l, e) *
           (d[static_cast<std::size_t>(mu)](e, nu) + d[static_cast<std::size_t>(nu)](e, mu) -
            d[static_cast<std::size_t>(e)](mu, nu));
    return v;
  }
};

/// Jets of gamma on one leaf from w = u^{-2}, g and their s-derivatives.
inline std::vector<GammaJet> gamma_jets(const ScalarField& w, const ScalarField& wrate, const SymTensorField& g,
                                        const SymTensorField& grate) {
  const TorusGrid& grid = g.grid();
  const int d = grid.dim();
  const int D = d + 1;
  auto dw = gradient_components(grid, w.component(0));
  std::vector<std::vector<std::vector<double>>> dg;  // [component][axis]
  for (int c = 0; c < g.components(); ++c) dg.push_back(gradient_components(grid, g.component(c)));
  std::vector<GammaJet> out(grid.size());
  parallel::for_each_index(grid.size(), [&](std::size_t p) {
    GammaJet& jet = out[p];
    jet.gamma = SmallMat::Zero(D, D);
    jet.gamma(0, 0) = w[p];
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) jet.gamma(1 + i, 1 + k) = g.at(i, k, p);
    jet.d.assign(static_cast<std::size_t>(D), SmallMat::Zero(D, D));
    jet.d[0](0, 0) = wrate[p];
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) jet.d[0](1 + i, 1 + k) = grate.at(i, k, p);
    for (int a = 0; a < d; ++a) {
      auto& m = jet.d[static_cast<std::size_t>(1 + a)];
      m(0, 0) = dw[static_cast<std::size_t>(a)][p];
      for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k)
          m(1 + i, 1 + k) = dg[static_cast<std::size_t>(sym_index(std::min(i, k), std::max(i, k), d))][static_cast<std::size_t>(a)][p];
    }
  });
  return out;
}

}  // namespace detail

/// k(X, Y) = gamma(nabla_X U, Y) / |U| with generic Christoffels of gamma.
inline InitialDataSet compute_k(const ScalarCurve& u, const MetricCurve& g) {
  u.validate();
  g.validate();
  const SGrid& sg = g.sgrid;
  const TorusGrid& grid = g[0].grid();
  const int d = grid.dim();
  const int D = d + 1;
  const auto grate = s_derivative(g);
  std::vector<ScalarField> w, u2;
  for (int j = 0; j < sg.size(); ++j) {
    w.push_back(lapse_coefficient(u[j]));
    u2.push_back(u[j] * u[j]);
  }
  const auto wrate = fd_derivative(w, sg.step());
  const auto u2rate = fd_derivative(u2, sg.step());
  InitialDataSet ids{sg, u, g, ScalarCurve{sg, {}, std::nullopt}, FieldCurve<CovectorField>{sg, {}, std::nullopt},
                     MetricCurve{sg, {}, std::nullopt}, 0.0};
  for (int j = 0; j < sg.size(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const auto jets = detail::gamma_jets(w[uj], wrate[uj], g[j], grate[j]);
    auto du2 = gradient_components(grid, u2[uj].component(0));
    ScalarField kss(grid);
    CovectorField ksi(grid);
    SymTensorField kij(grid);
    std::vector<double> asym(grid.size(), 0.0);
    parallel::for_each_index(grid.size(), [&](std::size_t p) {
      const SmallMat& gam = jets[p].gamma;
      const SmallMat gi = gam.inverse();
      // U^s = -u^2, nabla_a U^b = d_a U^b + Gamma^b_{a s} U^s
      SmallVec dUs(D);
      dUs(0) = -u2rate[uj][p];
      for (int a = 0; a < d; ++a) dUs(1 + a) = -du2[static_cast<std::size_t>(a)][p];
      const double Us = -u2[uj][p];
      SmallMat nablaU = SmallMat::Zero(D, D);  // (a, b) -> nabla_a U^b
      for (int a = 0; a < D; ++a)
        for (int b = 0; b < D; ++b) {
          nablaU(a, b) = (b == 0 ? dUs(a) : 0.0) + jets[p].christoffel(gi, b, a, 0) * Us;
        }
      const SmallMat k = nablaU * gam / u[j][p];  // k_ab = nabla_a U^c gamma_cb / u
      asym[p] = (k - k.transpose()).cwiseAbs().maxCoeff();
      const SmallMat ks = 0.5 * (k + k.transpose());
      kss[p] = ks(0, 0);
      for (int i = 0; i < d; ++i) {
        ksi(i, p) = ks(0, 1 + i);
        for (int l = i; l < d; ++l) kij.at(i, l, p) = ks(1 + i, 1 + l);
      }
    });
    for (double a : asym) ids.asymmetry = std::max(ids.asymmetry, a);
    ids.k_ss.samples.push_back(std::move(kss));
    ids.k_si.samples.push_back(std::move(ksi));
    ids.k_ij.samples.push_back(std::move(kij));
  }
  return ids;
}

inline InitialDataSet extract_ids(const PPWaveMetric& pp) {
  pp.validate();
  return compute_k(pp.u, pp.g);
}

struct UParResiduals {
  double norm = 0.0;        // sup ||U|_gamma - u|
  double asymmetry = 0.0;   // sup |k_ab - k_ba|
  double du_identity = 0.0;  // sup |du(X) - k(U, X)|
  double worst() const { return std::max({norm, asymmetry, du_identity}); }
};

inline UParResiduals upar_residuals(const InitialDataSet& ids) {
  UParResiduals r;
  r.asymmetry = ids.asymmetry;
  std::vector<ScalarField> us(ids.u.samples);
  const auto udot = fd_derivative(us, ids.sgrid.step());
  for (int j = 0; j < ids.sgrid.size(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const ScalarField& u = ids.u[j];
    const CovectorField du = differential(u);
    for (std::size_t p = 0; p < u.points(); ++p) {
      const double u2 = u[p] * u[p];
      const double norm = u2 * std::sqrt(1.0 / u2);  // |U|_gamma = u^2 sqrt(gamma_ss)
      r.norm = std::max(r.norm, std::abs(norm - u[p]));
      // k(U, d_s) = -u^2 k_ss, k(U, d_i) = -u^2 k_si
      r.du_identity = std::max(r.du_identity, std::abs(udot[uj][p] + u2 * ids.k_ss[j][p]));
      for (int i = 0; i < u.grid().dim(); ++i)
        r.du_identity = std::max(r.du_identity, std::abs(du(i, p) + u2 * ids.k_si[j](i, p)));
    }
  }
  return r;
}

/// -dv (x) gamma(U, .) - gamma(U, .) (x) dv + gamma; with gamma(U, .) = -ds this
/// is the block form with the same lapse and spatial curve.
inline PPWaveMetric killing_development(const InitialDataSet& ids, double tol = 1e-6) {
  const UParResiduals r = upar_residuals(ids);
  if (!(r.worst() < tol)) {
    std::ostringstream os;
    os << "U is not lightlike-parallel for (gamma, k): residual " << r.worst();
    throw PreconditionError(Stage::geometry, os.str());
  }
  return PPWaveMetric{ids.sgrid, ids.u, ids.g, std::nullopt};
}

// ---------------------------------------------------------------------------
// Energy condition
// ---------------------------------------------------------------------------

struct EnergyVerdict {
  bool holds = true;
  double min_rho = 0.0;
  double s_at_min = 0.0;
};

inline EnergyVerdict energy_condition(const ScalarCurve& rho) {
  EnergyVerdict v{true, std::numeric_limits<double>::infinity(), rho.sgrid.start()};
  for (int j = 0; j < rho.size(); ++j)
    for (double x : rho[j].raw())
      if (x < v.min_rho) {
        v.min_rho = x;
        v.s_at_min = rho.sgrid.at(j);
      }
  v.holds = v.min_rho >= 0.0;
  return v;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

struct AssembleOptions {
  CgOptions cg{1e-12, 0};
  double solvability_tol = 1e-9;  // relative weighted mean of the Poisson source
};

struct Assembly {
  PPWaveMetric metric;
  ScalarCurve rho;            // target restricted to the component
  int first = 0;              // index of the first sample of the component in the input grid
  std::vector<double> shift;  // c(s)
  double solvability = 0.0;   // max relative source mean
};

inline int pick_component(const LambdaSolution& lam, std::optional<int> component, std::optional<double> containing) {
  if (containing) return lam.component_containing(*containing);
  if (!component) throw PreconditionError(Stage::assemble, "choose a component of the zero-free set of lambda");
  const int n = static_cast<int>(lam.components().size());
  if (*component < 0 || *component >= n) {
    std::ostringstream os;
    os << "component " << *component << " out of range; lambda has " << n << " zero-free components";
    throw PreconditionError(Stage::assemble, os.str());
  }
  return *component;
}

/// Builds u and lambda^2 g~ on one zero-free component of lambda so that the
/// null Ricci profile is rho.
inline Assembly assemble(const MetricCurve& base, const ScalarCurve& rho, const ScaleData& data,
                         const LambdaSolution& lam, int component, const AssembleOptions& opt = {}) {
  base.validate();
  rho.validate();
  if (!base.derivative) throw PreconditionError(Stage::assemble, "assembly needs the gauged curve with its rate");
  const auto comps = lam.components();
  if (component < 0 || component >= static_cast<int>(comps.size()))
    throw PreconditionError(Stage::assemble, "component index out of range");
  const auto [a, b] = comps[static_cast<std::size_t>(component)];
  const SGrid& sg = base.sgrid;
  int first = -1, last = -1;
  for (int j = 0; j < sg.size(); ++j)
    if (sg.at(j) >= a && sg.at(j) <= b && std::abs(lam.lambda[static_cast<std::size_t>(j)]) > 1e-12) {
      if (first < 0) first = j;
      last = j;
    }
  if (first < 0 || last - first + 1 < 9)
    throw PreconditionError(Stage::assemble, "chosen component holds fewer than 9 s-samples");
  const SGrid sub(sg.at(first), sg.at(last), last - first + 1);
  const auto q = data.coefficient();

  Assembly out{PPWaveMetric{sub, ScalarCurve{sub, {}, std::nullopt}, MetricCurve{sub, {}, std::vector<SymTensorField>{}},
                            ScaleStructure{{}, {}, {}, MetricCurve{sub, {}, std::vector<SymTensorField>{}}}},
               ScalarCurve{sub, {}, std::nullopt}, first, {}, 0.0};
  std::vector<ScalarField> scaled;  // lambda^2 w0
  for (int j = first; j <= last; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const MetricField m(base[j]);
    const auto& rate = (*base.derivative)[uj];
    ScalarField src = norm_sq(m, rate);
    src *= 0.25;
    src += rho[j];
    const double pq = data.dim * q[uj];  // P + Sigma / 4
    for (auto& v : src.raw()) v -= pq;
    const double mn = mean(src, m.sqrt_det());
    const double rel = std::abs(mn) / std::max(src.max_abs(), 1.0);
    out.solvability = std::max(out.solvability, rel);
    if (rel > opt.solvability_tol) {
      std::ostringstream os;
      os << "Poisson source has mean " << mn << " at s = " << sg.at(j) << "; (P, Sigma) are inconsistent with the curve";
      throw PreconditionError(Stage::assemble, os.str());
    }
    src *= 2.0;
    ScalarField w0 = solve_poisson(m, src, opt.cg);
    const double l = lam.lambda[uj];
    w0 *= l * l;
    scaled.push_back(std::move(w0));
  }
  // one constant for the whole component, so min w >= 1 and c(s) is smooth
  const int n = sub.size();
  double c = 0.0;
  for (const auto& w : scaled)
    for (double v : w.raw()) c = std::max(c, 1.0 - v);
  out.shift.assign(static_cast<std::size_t>(n), c);

  auto& sc = *out.metric.scale;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int j = first + i;
    const auto uj = static_cast<std::size_t>(j);
    ScalarField u(base[j].grid());
    for (std::size_t p = 0; p < u.points(); ++p) u[p] = 1.0 / std::sqrt(scaled[ui][p] + out.shift[ui]);
    out.metric.u.samples.push_back(std::move(u));
    const double l = lam.lambda[uj], ld = lam.lambda_dot[uj];
    out.metric.g.samples.push_back((l * l) * base[j]);
    SymTensorField rate = (2.0 * l * ld) * base[j];
    rate.axpy(l * l, (*base.derivative)[uj]);
    out.metric.g.derivative->push_back(std::move(rate));
    sc.lambda.push_back(l);
    sc.lambda_dot.push_back(ld);
    sc.lambda_ddot.push_back(lam.lambda_ddot[uj]);
    sc.base.samples.push_back(base[j]);
    sc.base.derivative->push_back((*base.derivative)[uj]);
    out.rho.samples.push_back(rho[j]);
  }
  return out;
}

}  // namespace ppw
