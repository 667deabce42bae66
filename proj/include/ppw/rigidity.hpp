#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>

#include "ppw/ppwave.hpp"
#include "ppw/scale_ode.hpp"

namespace ppw {

/// Affine torus map x -> A x + b with A integral and invertible.
struct TorusMap {
  Eigen::MatrixXi A;
  Point b{0.0, 0.0, 0.0};

  static TorusMap identity(int d) { return {Eigen::MatrixXi::Identity(d, d), {0.0, 0.0, 0.0}}; }

  void validate(int d) const {
    if (A.rows() != d || A.cols() != d) throw PreconditionError(Stage::rigidity, "torus map has the wrong dimension");
    const double det = A.cast<double>().determinant();
    if (std::abs(std::abs(det) - 1.0) > 1e-12)
      throw PreconditionError(Stage::rigidity, "torus map matrix must have determinant +-1");
  }

  Point operator()(const Point& x) const {
    Point y = b;
    for (int i = 0; i < A.rows(); ++i)
      for (int k = 0; k < A.cols(); ++k) y[static_cast<std::size_t>(i)] += A(i, k) * x[static_cast<std::size_t>(k)];
    return y;
  }
};

/// A^T h(A x + b) A
inline SymTensorField pullback(const TorusMap& phi, const SymTensorField& h) {
  const TorusGrid& g = h.grid();
  const int d = g.dim();
  phi.validate(d);
  std::vector<Point> pts(g.size());
  for (std::size_t p = 0; p < pts.size(); ++p) pts[p] = phi(g.coordinate(p));
  const auto at = interpolate(h, pts);
  const SmallMat A = phi.A.cast<double>();
  const auto nc = static_cast<std::size_t>(h.components());
  SymTensorField out(g);
  for (std::size_t p = 0; p < g.size(); ++p) {
    SmallMat m(d, d);
    for (int a = 0; a < d; ++a)
      for (int c = a; c < d; ++c) m(a, c) = m(c, a) = at[p * nc + static_cast<std::size_t>(sym_index(a, c, d))];
    store_matrix(out, p, A.transpose() * m * A);
  }
  return out;
}

inline ScalarField pullback(const TorusMap& phi, const ScalarField& f) {
  const TorusGrid& g = f.grid();
  phi.validate(g.dim());
  std::vector<Point> pts(g.size());
  for (std::size_t p = 0; p < pts.size(); ++p) pts[p] = phi(g.coordinate(p));
  const auto at = interpolate(f, pts);
  ScalarField out(g);
  for (std::size_t p = 0; p < g.size(); ++p) out[p] = at[p];
  return out;
}

/// One period of a curve: samples on [s0, s0 + period] with g at the end equal
/// to phi^* of g at the start.
struct PeriodicCurve {
  MetricCurve curve;
  ScalarCurve rho;
  double period = 0.0;
  TorusMap map;
};

struct RigidityOptions {
  double periodicity_tol = 1e-8;  // sup |g(s0 + l) - phi^* g(s0)|
  double rigid_tol = 1e-8;        // sup |P + Sigma/4| accepted as zero
  double search_periods = 50.0;   // certificate search horizon, in periods
  SplitOptions split{};
};

enum class RigidityVerdict { rigid, obstructed };

inline const char* verdict_name(RigidityVerdict v) { return v == RigidityVerdict::rigid ? "RIGID" : "OBSTRUCTED"; }

struct RigidityCertificate {
  double s_star = 0.0;     // lambda(s_star) = 1, lambda'(s_star) = 0
  double zero = 0.0;       // first zero of lambda after s_star
  double slope = 0.0;
};

struct RigidityReport {
  RigidityVerdict verdict = RigidityVerdict::rigid;
  double periodicity = 0.0;
  double max_coefficient = 0.0;  // sup |P + Sigma/4|
  double max_sigma = 0.0;
  double max_rho_mean = 0.0;
  ScaleData data;
  std::optional<PPWaveMetric> product;  // mapping-torus metric when rigid
  std::optional<RigidityCertificate> certificate;
};

inline RigidityReport rigidity_check(const PeriodicCurve& pc, const RigidityOptions& opt = {}) {
  pc.curve.validate();
  pc.rho.validate();
  const SGrid& sg = pc.curve.sgrid;
  if (!(pc.period > 0.0)) throw PreconditionError(Stage::rigidity, "period must be positive");
  if (std::abs(sg.end() - sg.start() - pc.period) > 1e-9 * std::max(1.0, pc.period))
    throw PreconditionError(Stage::rigidity, "curve must be sampled over exactly one period");
  const EnergyVerdict ev = energy_condition(pc.rho);
  if (!ev.holds) {
    std::ostringstream os;
    os << "energy condition fails (rho = " << ev.min_rho << " at s = " << ev.s_at_min << "); rigidity does not apply";
    throw PreconditionError(Stage::rigidity, os.str());
  }
  const int last = sg.size() - 1;
  const double per = (pc.curve[last] - pullback(pc.map, pc.curve[0])).max_abs();
  const double rho_per = (pc.rho[last] - pullback(pc.map, pc.rho[0])).max_abs();
  if (!(per < opt.periodicity_tol) || !(rho_per < opt.periodicity_tol)) {
    std::ostringstream os;
    os << "curve is not periodic up to the given map: metric residual " << per << ", rho residual " << rho_per;
    throw PreconditionError(Stage::rigidity, os.str());
  }
  RigidityReport rep{RigidityVerdict::rigid, std::max(per, rho_per), 0.0, 0.0, 0.0,
                     compute_scale_data(pc.curve, pc.rho, opt.split), std::nullopt, std::nullopt};
  const auto q = rep.data.coefficient();
  for (std::size_t j = 0; j < q.size(); ++j) {
    rep.max_coefficient = std::max(rep.max_coefficient, std::abs(rep.data.dim * q[j]));
    rep.max_sigma = std::max(rep.max_sigma, std::abs(rep.data.Sigma[j]));
    rep.max_rho_mean = std::max(rep.max_rho_mean, std::abs(rep.data.P[j]));
  }
  if (rep.max_coefficient < opt.rigid_tol) {
    rep.product = product_metric(sg, pc.curve[0]);
    return rep;
  }
  rep.verdict = RigidityVerdict::obstructed;
  // any lambda with a critical point hits zero; take the critical point at the maximum of q
  std::size_t jmax = 0;
  for (std::size_t j = 1; j < q.size(); ++j)
    if (q[j] > q[jmax]) jmax = j;
  const double s_star = sg.at(static_cast<int>(jmax));
  const ScaleCoefficient coeff(sg, q, pc.period);
  const auto z = first_zero_periodic(coeff, s_star, 1.0, 0.0, s_star + opt.search_periods * pc.period);
  if (!z) {
    std::ostringstream os;
    os << "no zero of lambda found within " << opt.search_periods << " periods although P + Sigma/4 = "
       << rep.max_coefficient << "; raise search_periods";
    throw NumericalError(Stage::rigidity, os.str());
  }
  rep.certificate = RigidityCertificate{s_star, z->s, z->slope};
  return rep;
}

}  // namespace ppw
