#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ppw/error.hpp"
#include "ppw/riemann.hpp"
#include "ppw/torus_fields.hpp"

namespace ppw {

struct CgOptions {
  double tol = 1e-10;
  int max_iter = 0;  ///< 0 means 10 * N^d
};

struct CgReport {
  int iterations = 0;
  double relative_residual = 0.0;
  double removed_mean = 0.0;  ///< component of the right-hand side in the kernel
};

namespace detail {

using Flat = std::vector<double>;

inline double dot(const Flat& a, const Flat& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Preconditioned conjugate gradients for a symmetric positive semidefinite
/// operator; `project` removes the kernel component of a vector.
inline CgReport pcg(const std::function<Flat(const Flat&)>& apply,
                    const std::function<Flat(const Flat&)>& precondition,
                    const std::function<void(Flat&)>& project, const Flat& b, Flat& x,
                    double tol, int max_iter, const char* what) {
  Flat r = b;
  project(r);
  const double bnorm = std::sqrt(dot(r, r));
  x.assign(b.size(), 0.0);
  CgReport rep;
  // right-hand sides at roundoff level are solved once the residual is too
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::sqrt(static_cast<double>(b.size()));
  if (bnorm <= floor) return rep;
  Flat z = precondition(r);
  project(z);
  Flat p = z;
  // Roundoff in the discrete operator can stall the residual just above tol or
  // make later iterates diverge; the best iterate is kept and accepted when it
  // is within stall_accept * tol.
  constexpr int stall_window = 200;
  constexpr double stall_accept = 10.0;
  double best = 1.0;
  int best_it = 0;
  Flat x_best = x;
  auto settle = [&](const char* why) {
    if (best <= stall_accept * tol) {
      x = x_best;
      project(x);
      rep.relative_residual = best;
      return rep;
    }
    std::ostringstream os;
    os << what << ": " << why << " at relative residual " << best << " after " << rep.iterations << " iterations";
    throw ConvergenceError(Stage::split, os.str());
  };
  double rz = dot(r, z);
  for (int it = 1; it <= max_iter; ++it) {
    rep.iterations = it;
    Flat ap = apply(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) return settle("operator lost positivity");
    const double alpha = rz / pap;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    project(r);
    rep.relative_residual = std::sqrt(dot(r, r)) / bnorm;
    if (rep.relative_residual <= tol || rep.relative_residual * bnorm <= floor) {
      project(x);
      return rep;
    }
    if (rep.relative_residual < best) {
      if (rep.relative_residual < 0.5 * best || best > stall_accept * tol) best_it = it;
      best = rep.relative_residual;
      x_best = x;
    }
    if (it - best_it > stall_window) return settle("conjugate gradients stalled");
    z = precondition(r);
    project(z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = z[i] + beta * p[i];
  }
  if (best <= stall_accept * tol) return settle("iteration cap");
  throw ConvergenceError(Stage::split, std::string(what) + ": conjugate gradients hit the iteration cap");
}

inline int iteration_cap(const TorusGrid& grid, const CgOptions& o) {
  return o.max_iter > 0 ? o.max_iter : static_cast<int>(10 * grid.size());
}

/// Applies a Fourier multiplier given by a d x d matrix per wavevector to a
/// field with `nc` components stored contiguously.
inline Flat apply_matrix_multiplier(const TorusGrid& grid, const Flat& v, int nc,
                                    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& symbol) {
  const std::size_t np = grid.size();
  std::vector<std::vector<cplx>> coeff;
  for (int c = 0; c < nc; ++c)
    coeff.push_back(Spectrum(grid, std::span<const double>(v.data() + c * np, np)).coefficients());
  Spectrum probe(grid, std::vector<cplx>(np));
  for (std::size_t p = 0; p < np; ++p) {
    Eigen::VectorXd K(grid.dim());
    const auto k = probe.wavevector(p);
    for (int a = 0; a < grid.dim(); ++a)
      K(a) = probe.has_nyquist(p, a) ? 0.0 : two_pi * k[a];
    const Eigen::MatrixXd M = symbol(K);
    Eigen::VectorXcd in(nc);
    for (int c = 0; c < nc; ++c) in(c) = coeff[static_cast<std::size_t>(c)][p];
    const Eigen::VectorXcd out = M.cast<cplx>() * in;
    for (int c = 0; c < nc; ++c) coeff[static_cast<std::size_t>(c)][p] = out(c);
  }
  Flat result(v.size());
  for (int c = 0; c < nc; ++c) {
    auto real = Spectrum(grid, std::move(coeff[static_cast<std::size_t>(c)])).to_real();
    std::copy(real.begin(), real.end(), result.begin() + c * static_cast<std::ptrdiff_t>(np));
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scalar Poisson problem
// ---------------------------------------------------------------------------

/// Conservative divergence (1/sqrt g) D_k (sqrt g Y^k).
inline ScalarField divergence_conservative(const MetricField& m, const VectorField& y) {
  ScalarField out(m.grid());
  for (int k = 0; k < m.dim(); ++k) {
    std::vector<double> flux(m.grid().size());
    for (std::size_t p = 0; p < flux.size(); ++p) flux[p] = m.sqrt_det()[p] * y(k, p);
    auto d = spectral_diff(m.grid(), flux, k);
    for (std::size_t p = 0; p < flux.size(); ++p) out[p] += d[p];
  }
  for (std::size_t p = 0; p < out.points(); ++p) out[p] /= m.sqrt_det()[p];
  return out;
}

/// Solves -div grad w = rhs for w with zero mean against dvol_g. The
/// component of rhs in the kernel (its weighted mean) is removed and
/// reported.
inline ScalarField solve_poisson(const MetricField& m, const ScalarField& rhs, const CgOptions& opt = {},
                                 CgReport* report = nullptr) {
  require_same_grid(m.grid(), rhs.grid());
  const auto& grid = m.grid();
  const int d = m.dim();
  const std::size_t np = grid.size();
  // coefficient sqrt(g) g^{ij}
  SymTensorField coef = m.sqrt_det() * m.inverse();
  Eigen::MatrixXd cbar(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < np; ++p) s += coef.at(i, j, p);
      cbar(i, j) = s / static_cast<double>(np);
    }
  auto apply = [&](const detail::Flat& w) {
    auto grad = gradient_components(grid, w);
    detail::Flat out(np, 0.0);
    for (int i = 0; i < d; ++i) {
      std::vector<double> flux(np);
      for (std::size_t p = 0; p < np; ++p) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += coef.at(i, j, p) * grad[static_cast<std::size_t>(j)][p];
        flux[p] = acc;
      }
      auto dflux = spectral_diff(grid, flux, i);
      for (std::size_t p = 0; p < np; ++p) out[p] -= dflux[p];
    }
    return out;
  };
  auto precondition = [&](const detail::Flat& r) {
    return detail::apply_matrix_multiplier(grid, r, 1, [&](const Eigen::VectorXd& K) {
      Eigen::MatrixXd M(1, 1);
      const double sym = K.dot(cbar * K);
      M(0, 0) = sym > 1e-12 ? 1.0 / sym : 0.0;
      return M;
    });
  };
  // kernel: constants and the checkerboard modes that spectral derivatives zero
  std::vector<std::vector<double>> kernel;
  for (unsigned mask = 0; mask < (1u << d); ++mask) {
    std::vector<double> chi(np);
    for (std::size_t p = 0; p < np; ++p) {
      const auto idx = grid.multi_index(p);
      int parity = 0;
      for (int a = 0; a < d; ++a)
        if (mask & (1u << a)) parity += idx[static_cast<std::size_t>(a)];
      chi[p] = parity % 2 ? -1.0 : 1.0;
    }
    kernel.push_back(std::move(chi));
  }
  auto project = [&](detail::Flat& v) {
    for (const auto& chi : kernel) {
      double s = 0.0;
      for (std::size_t p = 0; p < np; ++p) s += chi[p] * v[p];
      s /= static_cast<double>(np);
      for (std::size_t p = 0; p < np; ++p) v[p] -= s * chi[p];
    }
  };
  const double rm = mean(rhs, m.sqrt_det());
  detail::Flat b(np);
  for (std::size_t p = 0; p < np; ++p) b[p] = m.sqrt_det()[p] * (rhs[p] - rm);
  detail::Flat x;
  CgReport rep = detail::pcg(apply, precondition, project, b, x, opt.tol, detail::iteration_cap(grid, opt),
                             "poisson");
  rep.removed_mean = rm;
  ScalarField w(grid);
  std::copy(x.begin(), x.end(), w.raw().begin());
  const double wm = mean(w, m.sqrt_det());
  for (auto& v : w.raw()) v -= wm;
  if (report) *report = rep;
  return w;
}

// ---------------------------------------------------------------------------
// Killing fields and vector elliptic problems
// ---------------------------------------------------------------------------

/// Parallel (Killing) fields of a flat metric on the torus, one per axis:
/// the duals of the harmonic representatives of dx^i.
inline std::vector<VectorField> killing_fields(const MetricField& m, const CgOptions& opt = {}) {
  const int d = m.dim();
  std::vector<VectorField> out;
  for (int i = 0; i < d; ++i) {
    VectorField gx(m.grid());
    for (std::size_t p = 0; p < gx.points(); ++p)
      for (int a = 0; a < d; ++a) gx(a, p) = m.inverse().at(a, i, p);
    const ScalarField src = divergence_conservative(m, gx);
    const ScalarField h = solve_poisson(m, src, opt);
    VectorField k = gx;
    k += gradient(m, h);
    out.push_back(std::move(k));
  }
  return out;
}

namespace detail {

/// Discrete Killing operator S Y = L_Y g and its exact transpose, giving an
/// exactly symmetric operator A Y = 1/2 S^T(sqrt g raise(P S Y)).
class KillingOperator {
 public:
  KillingOperator(const MetricField& m, bool conformal) : m_(m), conformal_(conformal) {}

  std::size_t size() const { return static_cast<std::size_t>(m_.dim()) * m_.grid().size(); }

  SymTensorField S(const Flat& y) const {
    VectorField v(m_.grid());
    std::copy(y.begin(), y.end(), v.raw().begin());
    return lie_metric(m_, v);
  }

  /// Pointwise trace-free projection when conformal.
  void P(SymTensorField& h) const {
    if (!conformal_) return;
    const auto tr = trace(m_, h);
    const double inv_d = 1.0 / m_.dim();
    for (std::size_t p = 0; p < h.points(); ++p)
      for (int i = 0; i < m_.dim(); ++i)
        for (int j = i; j < m_.dim(); ++j) h.at(i, j, p) -= inv_d * tr[p] * m_.g().at(i, j, p);
  }

  /// S^T applied to sqrt(g) g^{ia} g^{jb} H_ab (H symmetric).
  Flat ST_weighted(const SymTensorField& h) const {
    const auto& grid = m_.grid();
    const int d = m_.dim();
    const std::size_t np = grid.size();
    // Hup^{ij} = sqrt g g^{ia} g^{jb} h_ab
    std::vector<SmallMat> hup(np);
    for (std::size_t p = 0; p < np; ++p) {
      const SmallMat gi = matrix_at(m_.inverse(), p);
      hup[p] = m_.sqrt_det()[p] * gi * matrix_at(h, p) * gi;
    }
    Flat out(size(), 0.0);
    for (int k = 0; k < d; ++k) {
      for (std::size_t p = 0; p < np; ++p) {
        double acc = 0.0;
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) acc += m_.dg(k).at(i, j, p) * hup[p](i, j);
        out[static_cast<std::size_t>(k) * np + p] += acc;
      }
      for (int i = 0; i < d; ++i) {
        std::vector<double> flux(np);
        for (std::size_t p = 0; p < np; ++p) {
          double acc = 0.0;
          for (int j = 0; j < d; ++j) acc += m_.g().at(k, j, p) * hup[p](i, j);
          flux[p] = acc;
        }
        auto df = spectral_diff(grid, flux, i);
        for (std::size_t p = 0; p < np; ++p) out[static_cast<std::size_t>(k) * np + p] -= 2.0 * df[p];
      }
    }
    return out;
  }

  Flat apply(const Flat& y) const {
    SymTensorField sy = S(y);
    P(sy);
    Flat out = ST_weighted(sy);
    for (double& v : out) v *= 0.5;
    return out;
  }

  Flat precondition(const Flat& r) const {
    const auto& grid = m_.grid();
    const int d = m_.dim();
    const std::size_t np = grid.size();
    Eigen::MatrixXd G(d, d);
    double root = 0.0;
    for (std::size_t p = 0; p < np; ++p) root += m_.sqrt_det()[p];
    root /= static_cast<double>(np);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < np; ++p) s += m_.g().at(i, j, p);
        G(i, j) = s / static_cast<double>(np);
      }
    const Eigen::MatrixXd Ginv = G.inverse();
    const double cross = conformal_ ? 1.0 - 2.0 / d : 1.0;
    return apply_matrix_multiplier(grid, r, d, [&](const Eigen::VectorXd& K) {
      const double k2 = K.dot(Ginv * K);
      if (k2 < 1e-12) return Eigen::MatrixXd::Zero(d, d).eval();
      Eigen::MatrixXd M = root * (k2 * G + cross * K * K.transpose());
      return M.inverse().eval();
    });
  }

 private:
  const MetricField& m_;
  bool conformal_;
};

inline Flat flatten(const VectorField& v) { return v.raw(); }

/// Removes the span of the given fields in the plain inner product.
class KernelProjector {
 public:
  explicit KernelProjector(const std::vector<VectorField>& basis) {
    for (const auto& b : basis) basis_.push_back(b.raw());
    const auto n = static_cast<Eigen::Index>(basis_.size());
    gram_ = Eigen::MatrixXd(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) gram_(i, j) = dot(basis_[static_cast<std::size_t>(i)], basis_[static_cast<std::size_t>(j)]);
    solver_ = gram_.ldlt();
  }

  void operator()(Flat& v) const {
    const auto n = static_cast<Eigen::Index>(basis_.size());
    if (n == 0) return;
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) rhs(i) = dot(basis_[static_cast<std::size_t>(i)], v);
    const Eigen::VectorXd c = solver_.solve(rhs);
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t q = 0; q < v.size(); ++q) v[q] -= c(i) * basis_[static_cast<std::size_t>(i)][q];
  }

 private:
  std::vector<Flat> basis_;
  Eigen::MatrixXd gram_;
  Eigen::LDLT<Eigen::MatrixXd> solver_;
};

/// Removes the Killing component of a vector field in the L2(dvol_g) sense.
inline void remove_killing_part(const MetricField& m, const std::vector<VectorField>& killing, VectorField& y) {
  const auto n = static_cast<Eigen::Index>(killing.size());
  Eigen::MatrixXd gram(n, n);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    rhs(i) = l2_inner(m, killing[static_cast<std::size_t>(i)], y);
    for (Eigen::Index j = 0; j < n; ++j)
      gram(i, j) = l2_inner(m, killing[static_cast<std::size_t>(i)], killing[static_cast<std::size_t>(j)]);
  }
  const Eigen::VectorXd c = gram.ldlt().solve(rhs);
  for (Eigen::Index i = 0; i < n; ++i) y.axpy(-c(i), killing[static_cast<std::size_t>(i)]);
}

inline VectorField solve_killing_system(const MetricField& m, const SymTensorField& h, bool conformal,
                                        const std::vector<VectorField>& killing, const CgOptions& opt,
                                        CgReport* report, const char* what) {
  KillingOperator op(m, conformal);
  SymTensorField ph = h;
  op.P(ph);
  Flat b = op.ST_weighted(ph);
  for (double& v : b) v *= 0.5;
  KernelProjector project(killing);
  Flat x;
  CgReport rep = pcg([&](const Flat& y) { return op.apply(y); }, [&](const Flat& r) { return op.precondition(r); },
                     [&](Flat& v) { project(v); }, b, x, opt.tol, iteration_cap(m.grid(), opt), what);
  VectorField y(m.grid());
  std::copy(x.begin(), x.end(), y.raw().begin());
  remove_killing_part(m, killing, y);
  if (report) *report = rep;
  return y;
}

}  // namespace detail

/// Vector field Y, L2-orthogonal to Killing fields, such that the trace-free
/// part of h - L_Y g is divergence-free.
inline VectorField solve_conformal_killing(const MetricField& m, const SymTensorField& h,
                                           const std::vector<VectorField>& killing, const CgOptions& opt = {},
                                           CgReport* report = nullptr) {
  return detail::solve_killing_system(m, h, true, killing, opt, report, "conformal Killing system");
}

/// Vector field X, L2-orthogonal to Killing fields, with div(h + L_X g) = 0.
inline VectorField solve_gauge_generator(const MetricField& m, const SymTensorField& h,
                                         const std::vector<VectorField>& killing, const CgOptions& opt = {},
                                         CgReport* report = nullptr) {
  SymTensorField neg = h;
  neg *= -1.0;
  return detail::solve_killing_system(m, neg, false, killing, opt, report, "gauge system");
}

}  // namespace ppw
