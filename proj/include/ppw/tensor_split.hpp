#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include "ppw/elliptic.hpp"
#include "ppw/error.hpp"
#include "ppw/riemann.hpp"

namespace ppw {

struct SplitOptions {
  CgOptions cg{};
  double flat_tol = 1e-8;  // sup |ric| accepted as flat
  double j_tol = 1e-8;     // sup |div h - d tr h| accepted by split_j_solution
  double lie_tol = 1e-8;   // sup |L_X g| accepted as a Killing remainder
};

/// h = u g + hess f + L_X g + sigma, with div X = 0, tr sigma = 0, div sigma = 0.
struct TensorSplit {
  ScalarField u;
  double c = 0.0;  // weighted mean of u
  ScalarField f;   // weighted mean zero
  VectorField X;   // L2-orthogonal to the Killing fields
  SymTensorField sigma;

  SymTensorField trace_part;
  SymTensorField hessian_part;
  SymTensorField lie_part;

  CgReport conformal_report;
  CgReport poisson_report;

  std::array<const SymTensorField*, 4> parts() const { return {&trace_part, &hessian_part, &lie_part, &sigma}; }
};

inline const char* split_part_name(int i) {
  static constexpr const char* names[] = {"trace", "hessian", "lie", "tt"};
  return names[i];
}

namespace detail {

inline void require_flat(const MetricField& m, double tol) {
  const double r = ricci(m).max_abs();
  if (!(r < tol)) {
    std::ostringstream os;
    os << "tensor split needs a flat metric; sup|ric| = " << r << " exceeds " << tol;
    throw PreconditionError(Stage::split, os.str());
  }
}

}  // namespace detail

inline TensorSplit decompose(const MetricField& m, const SymTensorField& h,
                             const std::vector<VectorField>& killing, const SplitOptions& opt = {}) {
  require_same_grid(m.grid(), h.grid());
  detail::require_flat(m, opt.flat_tol);
  const int d = m.dim();
  TensorSplit out;
  const VectorField Y = solve_conformal_killing(m, h, killing, opt.cg, &out.conformal_report);
  SymTensorField rest = h - lie_metric(m, Y);

  out.u = trace(m, rest);
  out.u *= 1.0 / d;
  out.c = mean(out.u, m.sqrt_det());
  out.trace_part = scalar_times_metric(m, out.u);
  out.sigma = rest - out.trace_part;

  ScalarField src = divergence(m, Y);
  src *= -2.0;
  out.f = solve_poisson(m, src, opt.cg, &out.poisson_report);
  out.hessian_part = hessian(m, out.f);

  out.X = Y;
  out.X.axpy(-0.5, gradient(m, out.f));
  detail::remove_killing_part(m, killing, out.X);
  out.lie_part = lie_metric(m, out.X);
  return out;
}

inline TensorSplit decompose(const MetricField& m, const SymTensorField& h, const SplitOptions& opt = {}) {
  return decompose(m, h, killing_fields(m, opt.cg), opt);
}

struct SplitResiduals {
  double reconstruction = 0.0;  // sup norm
  double trace = 0.0;           // sup |tr sigma|
  double divergence = 0.0;      // sup |div sigma|
  double divergence_x = 0.0;    // sup |div X|
  std::array<std::array<double, 4>, 4> inner{};  // |<part_i, part_j>| / |h|^2
  double orthogonality = 0.0;   // max over i < j

  double pair(int i, int j) const { return inner[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; }
};

inline SplitResiduals verify_split(const MetricField& m, const SymTensorField& h, const TensorSplit& s) {
  SplitResiduals r;
  SymTensorField sum = s.trace_part + s.hessian_part;
  sum += s.lie_part;
  sum += s.sigma;
  sum -= h;
  r.reconstruction = sum.max_abs();
  r.trace = trace(m, s.sigma).max_abs();
  r.divergence = divergence(m, s.sigma).max_abs();
  r.divergence_x = divergence(m, s.X).max_abs();
  const double hn = std::max(l2_inner(m, h, h), 1e-300);
  const auto parts = s.parts();
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const double v = std::abs(l2_inner(m, *parts[static_cast<std::size_t>(i)], *parts[static_cast<std::size_t>(j)])) / hn;
      r.inner[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
      r.inner[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
      r.orthogonality = std::max(r.orthogonality, v);
    }
  return r;
}

/// h = c g + hess f + sigma for a solution of div h - d tr h = 0.
struct JSplit {
  double c = 0.0;
  ScalarField f;
  SymTensorField sigma;
  double j_residual = 0.0;
  double u_variation = 0.0;     // sup |u - c|
  double lie_residual = 0.0;    // sup |L_X g|
  double lichnerowicz = 0.0;    // sup |Delta_L sigma|, diagnostic only
  double reconstruction = 0.0;  // sup |c g + hess f + sigma - h|
};

inline double j_residual(const MetricField& m, const SymTensorField& h) {
  CovectorField r = divergence(m, h);
  r -= differential(trace(m, h));
  return r.max_abs();
}

inline JSplit split_j_solution(const MetricField& m, const SymTensorField& h,
                               const std::vector<VectorField>& killing, const SplitOptions& opt = {}) {
  JSplit out;
  out.j_residual = j_residual(m, h);
  if (!(out.j_residual < opt.j_tol)) {
    std::ostringstream os;
    os << "input does not solve the j-equation: residual " << out.j_residual << " exceeds " << opt.j_tol;
    throw PreconditionError(Stage::split, os.str());
  }
  TensorSplit s = decompose(m, h, killing, opt);
  out.c = s.c;
  for (double v : s.u.raw()) out.u_variation = std::max(out.u_variation, std::abs(v - s.c));
  out.lie_residual = s.lie_part.max_abs();
  if (!(out.lie_residual < opt.lie_tol)) {
    std::ostringstream os;
    os << "Lie part of a j-equation solution is not Killing: sup|L_X g| = " << out.lie_residual;
    throw NumericalError(Stage::split, os.str());
  }
  out.f = std::move(s.f);
  out.sigma = std::move(s.sigma);
  out.lichnerowicz = lichnerowicz(m, out.sigma).max_abs();
  SymTensorField rec = out.c * m.g();
  rec += hessian(m, out.f);
  rec += out.sigma;
  rec -= h;
  out.reconstruction = rec.max_abs();
  return out;
}

inline JSplit split_j_solution(const MetricField& m, const SymTensorField& h, const SplitOptions& opt = {}) {
  return split_j_solution(m, h, killing_fields(m, opt.cg), opt);
}

}  // namespace ppw
