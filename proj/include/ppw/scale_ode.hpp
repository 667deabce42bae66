#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ppw/error.hpp"
#include "ppw/gauge_flow.hpp"
#include "ppw/riemann.hpp"
#include "ppw/tensor_split.hpp"
#include "ppw/torus_fields.hpp"

namespace ppw {

struct ScaleData {
  SGrid sgrid;
  int dim = 0;  // dimension of the leaves
  std::vector<double> P;
  std::vector<double> Sigma;

  /// (P + Sigma/4) / dim at every sample.
  std::vector<double> coefficient() const {
    std::vector<double> q(P.size());
    for (std::size_t j = 0; j < q.size(); ++j) q[j] = (P[j] + 0.25 * Sigma[j]) / dim;
    return q;
  }
};

/// P_s = mean of rho_s, Sigma_s = mean of |sigma_s|^2 with sigma_s the TT-part
/// of gdot_s.
inline ScaleData compute_scale_data(const MetricCurve& curve, const ScalarCurve& rho, const SplitOptions& opt = {}) {
  curve.validate();
  rho.validate();
  if (!(rho.sgrid == curve.sgrid)) throw PreconditionError(Stage::scale, "rho and metric curves use different s-grids");
  const auto rate = s_derivative(curve);
  ScaleData out{curve.sgrid, curve[0].grid().dim(), {}, {}};
  for (int j = 0; j < curve.size(); ++j) {
    const MetricField m(curve[j]);
    const TensorSplit split = decompose(m, rate[j], opt);
    out.P.push_back(mean(rho[j], m.sqrt_det()));
    out.Sigma.push_back(mean(norm_sq(m, split.sigma), m.sqrt_det()));
  }
  return out;
}

/// Coefficient q(s) of lambda'' = -q lambda, cubic Lagrange between samples.
/// With a period, s is reduced into [start, start + period) first.
class ScaleCoefficient {
 public:
  ScaleCoefficient(SGrid sgrid, std::vector<double> q, std::optional<double> period = std::nullopt)
      : sgrid_(sgrid), q_(std::move(q)), period_(period) {}

  explicit ScaleCoefficient(const ScaleData& data, std::optional<double> period = std::nullopt)
      : ScaleCoefficient(data.sgrid, data.coefficient(), period) {}

  double operator()(double s) const {
    if (period_) {
      s = sgrid_.start() + std::fmod(s - sgrid_.start(), *period_);
      if (s < sgrid_.start()) s += *period_;
    }
    return lagrange_eval(sgrid_, q_, s, 4);
  }

  const SGrid& sgrid() const { return sgrid_; }
  const std::vector<double>& samples() const { return q_; }
  std::optional<double> period() const { return period_; }

 private:
  SGrid sgrid_;
  std::vector<double> q_;
  std::optional<double> period_;
};

namespace detail {

struct OdeState {
  double y = 0.0;
  double dy = 0.0;
};

inline OdeState rk4_scale(const ScaleCoefficient& q, double s, OdeState x, double s_end, int steps) {
  const double h = (s_end - s) / steps;
  for (int k = 0; k < steps; ++k) {
    auto f = [&](double t, const OdeState& z) { return OdeState{z.dy, -q(t) * z.y}; };
    const OdeState k1 = f(s, x);
    const OdeState k2 = f(s + 0.5 * h, {x.y + 0.5 * h * k1.y, x.dy + 0.5 * h * k1.dy});
    const OdeState k3 = f(s + 0.5 * h, {x.y + 0.5 * h * k2.y, x.dy + 0.5 * h * k2.dy});
    const OdeState k4 = f(s + h, {x.y + h * k3.y, x.dy + h * k3.dy});
    x.y += h / 6.0 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
    x.dy += h / 6.0 * (k1.dy + 2 * k2.dy + 2 * k3.dy + k4.dy);
    s += h;
  }
  return x;
}

inline int steps_for(double span, double h) { return std::max(1, static_cast<int>(std::ceil(std::abs(span) / h - 1e-9))); }

/// Locates the zero of lambda in (a, b] given the state at a, to 1e-12 in s.
inline std::pair<double, double> bisect_zero(const ScaleCoefficient& q, double a, OdeState xa, double b, double h) {
  double lo = a, hi = b;
  const double sign_a = xa.y;
  auto state_at = [&](double t) { return rk4_scale(q, a, xa, t, steps_for(t - a, h)); };
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (state_at(mid).y * sign_a > 0) lo = mid;
    else hi = mid;
  }
  const double z = 0.5 * (lo + hi);
  return {z, state_at(z).dy};
}

}  // namespace detail

struct ZeroCrossing {
  double s = 0.0;
  double slope = 0.0;  // lambda'(s)
};

struct LambdaSolution {
  SGrid sgrid;
  double s_star = 0.0;
  double lambda0 = 0.0;
  double lambda_dot0 = 0.0;
  std::vector<double> lambda;
  std::vector<double> lambda_dot;
  std::vector<double> lambda_ddot;  // -q lambda at the samples
  std::vector<ZeroCrossing> zeros;

  /// Open intervals of the s-range on which lambda does not vanish.
  std::vector<std::pair<double, double>> components() const {
    std::vector<std::pair<double, double>> out;
    double a = sgrid.start();
    for (const auto& z : zeros) {
      if (z.s > a) out.emplace_back(a, z.s);
      a = z.s;
    }
    if (sgrid.end() > a) out.emplace_back(a, sgrid.end());
    return out;
  }

  int component_containing(double s) const {
    const auto c = components();
    for (std::size_t i = 0; i < c.size(); ++i) {
      const bool lo = s > c[i].first || (s == c[i].first && i == 0 && s == sgrid.start());
      const bool hi = s < c[i].second || (s == c[i].second && i + 1 == c.size() && s == sgrid.end());
      if (lo && hi) return static_cast<int>(i);
    }
    throw PreconditionError(Stage::scale, "s lies on a zero of lambda or outside the interval");
  }

  void write_csv(std::ostream& os, const ScaleData* data = nullptr) const {
    os << "s,lambda,lambda_dot" << (data ? ",P,Sigma" : "") << "\n";
    os.precision(17);
    for (int j = 0; j < sgrid.size(); ++j) {
      const auto uj = static_cast<std::size_t>(j);
      os << sgrid.at(j) << "," << lambda[uj] << "," << lambda_dot[uj];
      if (data) os << "," << data->P[uj] << "," << data->Sigma[uj];
      os << "\n";
    }
  }
};

struct OdeOptions {
  int substeps = 1;  // RK4 steps per s-interval
};

/// Solves lambda'' = -q lambda with lambda(s*) = lambda0, lambda'(s*) = lambda_dot0.
inline LambdaSolution solve_lambda(const ScaleCoefficient& q, double s_star, double lambda0, double lambda_dot0,
                                   const OdeOptions& opt = {}) {
  const SGrid& sg = q.sgrid();
  if (lambda0 == 0.0 && lambda_dot0 == 0.0)
    throw PreconditionError(Stage::scale, "initial data (0, 0) gives the trivial solution");
  if (!sg.contains(s_star)) throw PreconditionError(Stage::scale, "s* lies outside the s-interval");
  const double h = sg.step() / opt.substeps;
  const auto m = static_cast<std::size_t>(sg.size());
  LambdaSolution out{sg, s_star, lambda0, lambda_dot0, std::vector<double>(m), std::vector<double>(m),
                     std::vector<double>(m), {}};
  const detail::OdeState init{lambda0, lambda_dot0};
  // first sample at or after s*, then march both ways
  int right = 0;
  while (right < sg.size() && sg.at(right) < s_star - 1e-14) ++right;
  detail::OdeState x = init;
  double s = s_star;
  for (int j = right; j < sg.size(); ++j) {
    x = detail::rk4_scale(q, s, x, sg.at(j), detail::steps_for(sg.at(j) - s, h));
    s = sg.at(j);
    out.lambda[static_cast<std::size_t>(j)] = x.y;
    out.lambda_dot[static_cast<std::size_t>(j)] = x.dy;
  }
  x = init;
  s = s_star;
  for (int j = right - 1; j >= 0; --j) {
    x = detail::rk4_scale(q, s, x, sg.at(j), detail::steps_for(sg.at(j) - s, h));
    s = sg.at(j);
    out.lambda[static_cast<std::size_t>(j)] = x.y;
    out.lambda_dot[static_cast<std::size_t>(j)] = x.dy;
  }
  for (std::size_t j = 0; j < m; ++j) out.lambda_ddot[j] = -q.samples()[j] * out.lambda[j];

  const double hz = sg.step() / 16;
  for (int j = 0; j + 1 < sg.size(); ++j) {
    const auto a = static_cast<std::size_t>(j);
    const double ya = out.lambda[a], yb = out.lambda[a + 1];
    if (ya == 0.0) {
      out.zeros.push_back({sg.at(j), out.lambda_dot[a]});
    } else if (ya * yb < 0.0) {
      auto [z, slope] = detail::bisect_zero(q, sg.at(j), {ya, out.lambda_dot[a]}, sg.at(j + 1), hz);
      out.zeros.push_back({z, slope});
    }
  }
  if (out.lambda.back() == 0.0) out.zeros.push_back({sg.end(), out.lambda_dot.back()});
  return out;
}

inline LambdaSolution solve_lambda(const ScaleData& data, double s_star, double lambda0, double lambda_dot0,
                                   const OdeOptions& opt = {}) {
  return solve_lambda(ScaleCoefficient(data), s_star, lambda0, lambda_dot0, opt);
}

/// Solutions with (lambda, lambda') = (1, 0) and (0, 1) at s*.
struct SolutionBasis {
  LambdaSolution first;
  LambdaSolution second;

  std::vector<double> wronskian() const {
    std::vector<double> w(first.lambda.size());
    for (std::size_t j = 0; j < w.size(); ++j)
      w[j] = first.lambda[j] * second.lambda_dot[j] - second.lambda[j] * first.lambda_dot[j];
    return w;
  }
};

inline SolutionBasis solution_basis(const ScaleCoefficient& q, double s_star, const OdeOptions& opt = {}) {
  return {solve_lambda(q, s_star, 1.0, 0.0, opt), solve_lambda(q, s_star, 0.0, 1.0, opt)};
}

// ---------------------------------------------------------------------------
// Zero spacing bounds
// ---------------------------------------------------------------------------

struct ZeroSpacingReport {
  bool pass = true;
  std::vector<std::string> violations;
  double min_spacing = std::numeric_limits<double>::infinity();
  double max_gap = 0.0;  // longest zero-free stretch of the s-interval
};

/// C >= sup q and c <= inf q are supplied by the caller.
inline ZeroSpacingReport check_zero_spacing(const LambdaSolution& sol, double C, double c, double tol = 1e-6) {
  ZeroSpacingReport r;
  const auto& z = sol.zeros;
  for (std::size_t i = 0; i + 1 < z.size(); ++i) r.min_spacing = std::min(r.min_spacing, z[i + 1].s - z[i].s);
  for (const auto& comp : sol.components()) r.max_gap = std::max(r.max_gap, comp.second - comp.first);
  auto fail = [&](const std::string& msg) {
    r.pass = false;
    r.violations.push_back(msg);
  };
  if (C > 0) {
    const double bound = std::numbers::pi / std::sqrt(C);
    for (std::size_t i = 0; i + 1 < z.size(); ++i)
      if (z[i + 1].s - z[i].s < bound - tol) {
        std::ostringstream os;
        os << "zeros at " << z[i].s << " and " << z[i + 1].s << " are closer than pi/sqrt(C) = " << bound;
        fail(os.str());
      }
  } else if (z.size() > 1) {
    std::ostringstream os;
    os << "nonpositive coefficient admits at most one zero, found " << z.size();
    fail(os.str());
  }
  if (c > 0) {
    const double bound = std::numbers::pi / std::sqrt(c);
    for (const auto& comp : sol.components())
      if (comp.second - comp.first > bound + tol) {
        std::ostringstream os;
        os << "zero-free stretch (" << comp.first << ", " << comp.second << ") is longer than pi/sqrt(c) = " << bound;
        fail(os.str());
      }
  }
  for (const auto& zz : z)
    if (std::abs(zz.slope) <= 1e-6) {
      std::ostringstream os;
      os << "zero at " << zz.s << " is not simple: slope " << zz.slope;
      fail(os.str());
    }
  return r;
}

/// Integrates a periodically extended coefficient forward from s* until lambda
/// changes sign; returns the first zero, or nothing within s_max.
inline std::optional<ZeroCrossing> first_zero_periodic(const ScaleCoefficient& q, double s_star, double lambda0,
                                                       double lambda_dot0, double s_max) {
  if (!q.period()) throw PreconditionError(Stage::scale, "periodic search needs a period");
  const double h = q.sgrid().step();
  detail::OdeState x{lambda0, lambda_dot0};
  for (double s = s_star; s < s_max; s += h) {
    const detail::OdeState next = detail::rk4_scale(q, s, x, s + h, 4);
    if (x.y == 0.0) return ZeroCrossing{s, x.dy};
    if (x.y * next.y < 0.0) {
      auto [z, slope] = detail::bisect_zero(q, s, x, s + h, h / 16);
      return ZeroCrossing{z, slope};
    }
    x = next;
  }
  return std::nullopt;
}

struct InvarianceResiduals {
  double P = 0.0;      // sup_s |P~ - P|
  double Sigma = 0.0;  // sup_s |Sigma~ - Sigma|
};

/// Recomputes (P, Sigma) for (c_s phi_s^* g_s, phi_s^* rho_s) and compares.
/// scaling returns (c, c') at s.
inline InvarianceResiduals check_invariance(const MetricCurve& curve, const ScalarCurve& rho, const DiffeoFamily& fam,
                                            const std::function<std::pair<double, double>(double)>& scaling,
                                            const SplitOptions& opt = {}) {
  const ScaleData base = compute_scale_data(curve, rho, opt);
  const auto rate = s_derivative(curve);
  MetricCurve moved{curve.sgrid, {}, std::vector<SymTensorField>{}};
  ScalarCurve moved_rho{curve.sgrid, {}, std::nullopt};
  for (int j = 0; j < curve.size(); ++j) {
    const auto [c, dc] = scaling(curve.sgrid.at(j));
    const MetricField m(curve[j]);
    SymTensorField h = rate[j] + lie_metric(m, fam.generator[j]);
    h *= c;
    h.axpy(dc, curve[j]);
    moved.derivative->push_back(pullback(fam[j], h));
    moved.samples.push_back(c * pullback(fam[j], curve[j]));
    moved_rho.samples.push_back(pullback(fam[j], rho[j]));
  }
  const ScaleData other = compute_scale_data(moved, moved_rho, opt);
  InvarianceResiduals r;
  for (std::size_t j = 0; j < base.P.size(); ++j) {
    r.P = std::max(r.P, std::abs(other.P[j] - base.P[j]));
    r.Sigma = std::max(r.Sigma, std::abs(other.Sigma[j] - base.Sigma[j]));
  }
  return r;
}

}  // namespace ppw
