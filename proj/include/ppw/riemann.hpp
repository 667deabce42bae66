#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "ppw/error.hpp"
#include "ppw/parallel.hpp"
#include "ppw/torus_fields.hpp"

namespace ppw {

/// Small dense matrix with no heap allocation (up to 5 x 5).
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 5>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 5, 1>;

inline SmallMat matrix_at(const SymTensorField& t, std::size_t p) {
  const int d = t.grid().dim();
  SmallMat m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = t.at(i, j, p);
  return m;
}

inline void store_matrix(SymTensorField& t, std::size_t p, const SmallMat& m) {
  const int d = t.grid().dim();
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) t.at(i, j, p) = 0.5 * (m(i, j) + m(j, i));
}

template <FieldKind K>
SmallVec vector_at(const Field<K>& f, std::size_t p) {
  SmallVec v(f.components());
  for (int c = 0; c < f.components(); ++c) v(c) = f(c, p);
  return v;
}

/// Christoffel symbols Gamma^k_{ij}, stored for i <= j.
class ChristoffelField {
 public:
  ChristoffelField() = default;
  explicit ChristoffelField(const TorusGrid& grid)
      : grid_(grid),
        data_(static_cast<std::size_t>(grid.dim() * component_count(FieldKind::sym_tensor, grid.dim())) *
                  grid.size(),
              0.0) {}

  const TorusGrid& grid() const { return *grid_; }

  double& operator()(int k, int i, int j, std::size_t p) { return data_[offset(k, i, j) + p]; }
  double operator()(int k, int i, int j, std::size_t p) const { return data_[offset(k, i, j) + p]; }

  std::span<const double> component(int k, int i, int j) const {
    return {data_.data() + offset(k, i, j), grid_->size()};
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::size_t offset(int k, int i, int j) const {
    const int d = grid_->dim();
    const int s = component_count(FieldKind::sym_tensor, d);
    return static_cast<std::size_t>(k * s + sym_index(i, j, d)) * grid_->size();
  }

  std::optional<TorusGrid> grid_;
  std::vector<double> data_;
};

/// Riemannian metric on the torus with cached inverse, volume density,
/// first derivatives and Christoffel symbols.
class MetricField {
 public:
  explicit MetricField(SymTensorField g, double min_eigenvalue = 1e-10)
      : g_(std::move(g)), inv_(g_.grid()), sqrt_det_(g_.grid()) {
    const auto& grid = g_.grid();
    const int d = grid.dim();
    for (std::size_t p = 0; p < grid.size(); ++p) {
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          if (!std::isfinite(g_.at(i, j, p)))
            throw PreconditionError(Stage::geometry, "metric has non-finite entries");
      const SmallMat m = matrix_at(g_, p);
      Eigen::SelfAdjointEigenSolver<SmallMat> es(m, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > min_eigenvalue))
        throw PreconditionError(Stage::geometry, "metric is not positive definite");
      store_matrix(inv_, p, m.inverse());
      sqrt_det_[p] = std::sqrt(m.determinant());
    }
    dg_.reserve(static_cast<std::size_t>(d));
    for (int a = 0; a < d; ++a) dg_.push_back(spectral_diff(g_, a));
    gamma_ = ChristoffelField(grid);
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j)
          for (std::size_t p = 0; p < grid.size(); ++p) {
            double acc = 0.0;
            for (int l = 0; l < d; ++l)
              acc += inv_.at(k, l, p) *
                     (dg_[i].at(j, l, p) + dg_[j].at(i, l, p) - dg_[l].at(i, j, p));
            gamma_(k, i, j, p) = 0.5 * acc;
          }
  }

  const TorusGrid& grid() const { return g_.grid(); }
  int dim() const { return g_.grid().dim(); }
  const SymTensorField& g() const { return g_; }
  const SymTensorField& inverse() const { return inv_; }
  const ScalarField& sqrt_det() const { return sqrt_det_; }
  const SymTensorField& dg(int axis) const { return dg_[static_cast<std::size_t>(axis)]; }
  const ChristoffelField& christoffel() const { return gamma_; }
  double volume() const { return integrate(sqrt_det_); }

 private:
  SymTensorField g_;
  SymTensorField inv_;
  ScalarField sqrt_det_;
  std::vector<SymTensorField> dg_;
  ChristoffelField gamma_;
};

inline const ChristoffelField& christoffel(const MetricField& metric) { return metric.christoffel(); }

// ---------------------------------------------------------------------------
// Curvature
// ---------------------------------------------------------------------------

/// Riemann tensor R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db}
/// - G^a_{de} G^e_{cb}, its Ricci contraction R^a_{bad} and scalar curvature.
class Curvature {
 public:
  Curvature(const TorusGrid& grid)
      : grid_(grid),
        riemann_(static_cast<std::size_t>(grid.dim() * grid.dim() * grid.dim() * grid.dim()) * grid.size()),
        ricci_(grid),
        scalar_(grid) {}

  double& up(int a, int b, int c, int e, std::size_t p) { return riemann_[offset(a, b, c, e) + p]; }
  double up(int a, int b, int c, int e, std::size_t p) const { return riemann_[offset(a, b, c, e) + p]; }

  /// R_{abce} = g_{af} R^f_{bce}.
  double down(const MetricField& m, int a, int b, int c, int e, std::size_t p) const {
    double acc = 0.0;
    for (int f = 0; f < grid_.dim(); ++f) acc += m.g().at(a, f, p) * up(f, b, c, e, p);
    return acc;
  }

  SymTensorField& ricci() { return ricci_; }
  const SymTensorField& ricci() const { return ricci_; }
  ScalarField& scalar() { return scalar_; }
  const ScalarField& scalar() const { return scalar_; }
  const TorusGrid& grid() const { return grid_; }

 private:
  std::size_t offset(int a, int b, int c, int e) const {
    const int d = grid_.dim();
    return static_cast<std::size_t>(((a * d + b) * d + c) * d + e) * grid_.size();
  }

  TorusGrid grid_;
  std::vector<double> riemann_;
  SymTensorField ricci_;
  ScalarField scalar_;
};

inline Curvature curvature(const MetricField& metric) {
  const auto& grid = metric.grid();
  const int d = grid.dim();
  const auto& G = metric.christoffel();
  const std::size_t np = grid.size();
  // dG[a][k][sym(i,j)] = d_a G^k_{ij}
  std::vector<std::vector<std::vector<double>>> dG(static_cast<std::size_t>(d));
  const int ns = component_count(FieldKind::sym_tensor, d);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        auto parts = gradient_components(grid, G.component(k, i, j));
        for (int a = 0; a < d; ++a) {
          auto& slot = dG[static_cast<std::size_t>(a)];
          slot.resize(static_cast<std::size_t>(d * ns));
          slot[static_cast<std::size_t>(k * ns + sym_index(i, j, d))] = std::move(parts[a]);
        }
      }
  auto dgam = [&](int a, int k, int i, int j, std::size_t p) {
    return dG[static_cast<std::size_t>(a)][static_cast<std::size_t>(k * ns + sym_index(i, j, d))][p];
  };
  Curvature out(grid);
  parallel::for_each_index(np, [&](std::size_t p) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c)
          for (int e = 0; e < d; ++e) {
            double r = dgam(c, a, e, b, p) - dgam(e, a, c, b, p);
            for (int f = 0; f < d; ++f)
              r += G(a, c, f, p) * G(f, e, b, p) - G(a, e, f, p) * G(f, c, b, p);
            out.up(a, b, c, e, p) = r;
          }
    double scal = 0.0;
    for (int b = 0; b < d; ++b)
      for (int e = b; e < d; ++e) {
        double r1 = 0.0, r2 = 0.0;
        for (int a = 0; a < d; ++a) {
          r1 += out.up(a, b, a, e, p);
          r2 += out.up(a, e, a, b, p);
        }
        out.ricci().at(b, e, p) = 0.5 * (r1 + r2);
      }
    for (int b = 0; b < d; ++b)
      for (int e = 0; e < d; ++e) scal += metric.inverse().at(b, e, p) * out.ricci().at(b, e, p);
    out.scalar()[p] = scal;
  });
  return out;
}

inline SymTensorField ricci(const MetricField& metric) { return curvature(metric).ricci(); }

// ---------------------------------------------------------------------------
// Algebra
// ---------------------------------------------------------------------------

inline CovectorField lower(const MetricField& m, const VectorField& x) {
  require_same_grid(m.grid(), x.grid());
  const int d = m.dim();
  CovectorField out(m.grid());
  for (std::size_t p = 0; p < out.points(); ++p)
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += m.g().at(i, j, p) * x(j, p);
      out(i, p) = acc;
    }
  return out;
}

inline VectorField raise(const MetricField& m, const CovectorField& w) {
  require_same_grid(m.grid(), w.grid());
  const int d = m.dim();
  VectorField out(m.grid());
  for (std::size_t p = 0; p < out.points(); ++p)
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += m.inverse().at(i, j, p) * w(j, p);
      out(i, p) = acc;
    }
  return out;
}

inline VectorField gradient(const MetricField& m, const ScalarField& f) {
  return raise(m, differential(f));
}

/// tr h = g^{ij} h_ij
inline ScalarField trace(const MetricField& m, const SymTensorField& h) {
  require_same_grid(m.grid(), h.grid());
  const int d = m.dim();
  ScalarField out(m.grid());
  for (std::size_t p = 0; p < out.points(); ++p) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) acc += m.inverse().at(i, j, p) * h.at(i, j, p);
    out[p] = acc;
  }
  return out;
}

/// Pointwise g(a, b) = g^{ik} g^{jl} a_ij b_kl.
inline ScalarField inner(const MetricField& m, const SymTensorField& a, const SymTensorField& b) {
  require_same_grid(m.grid(), a.grid());
  require_same_grid(m.grid(), b.grid());
  ScalarField out(m.grid());
  for (std::size_t p = 0; p < out.points(); ++p) {
    const SmallMat gi = matrix_at(m.inverse(), p);
    const SmallMat am = matrix_at(a, p);
    const SmallMat bm = matrix_at(b, p);
    out[p] = (gi * am * gi * bm).trace();
  }
  return out;
}

inline ScalarField norm_sq(const MetricField& m, const SymTensorField& h) { return inner(m, h, h); }

inline ScalarField norm_sq(const MetricField& m, const CovectorField& w) {
  ScalarField out(m.grid());
  const int d = m.dim();
  for (std::size_t p = 0; p < out.points(); ++p) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) acc += m.inverse().at(i, j, p) * w(i, p) * w(j, p);
    out[p] = acc;
  }
  return out;
}

/// L2 inner product of two symmetric tensors with respect to dvol_g.
inline double l2_inner(const MetricField& m, const SymTensorField& a, const SymTensorField& b) {
  return integrate(inner(m, a, b), m.sqrt_det());
}

inline double l2_inner(const MetricField& m, const VectorField& a, const VectorField& b) {
  const auto al = lower(m, a);
  ScalarField prod(m.grid());
  for (std::size_t p = 0; p < prod.points(); ++p)
    for (int i = 0; i < m.dim(); ++i) prod[p] += al(i, p) * b(i, p);
  return integrate(prod, m.sqrt_det());
}

/// Scalar field times the metric.
inline SymTensorField scalar_times_metric(const MetricField& m, const ScalarField& u) {
  return u * m.g();
}

// ---------------------------------------------------------------------------
// Differential operators
// ---------------------------------------------------------------------------

/// (div h)_j = g^{ik} (nabla_k h)_{ij}
inline CovectorField divergence(const MetricField& m, const SymTensorField& h) {
  require_same_grid(m.grid(), h.grid());
  const int d = m.dim();
  const auto& G = m.christoffel();
  std::vector<SymTensorField> dh;
  for (int a = 0; a < d; ++a) dh.push_back(spectral_diff(h, a));
  CovectorField out(m.grid());
  parallel::for_each_index(out.points(), [&](std::size_t p) {
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
          double nabla = dh[static_cast<std::size_t>(k)].at(i, j, p);
          for (int l = 0; l < d; ++l)
            nabla -= G(l, k, i, p) * h.at(l, j, p) + G(l, k, j, p) * h.at(i, l, p);
          acc += m.inverse().at(i, k, p) * nabla;
        }
      out(j, p) = acc;
    }
  });
  return out;
}

/// div X = d_i X^i + G^i_{ik} X^k
inline ScalarField divergence(const MetricField& m, const VectorField& x) {
  require_same_grid(m.grid(), x.grid());
  const int d = m.dim();
  const auto& G = m.christoffel();
  ScalarField out(m.grid());
  for (int i = 0; i < d; ++i) {
    auto di = spectral_diff(x.grid(), x.component(i), i);
    for (std::size_t p = 0; p < out.points(); ++p) out[p] += di[p];
  }
  for (std::size_t p = 0; p < out.points(); ++p)
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) out[p] += G(i, i, k, p) * x(k, p);
  return out;
}

/// nabla^2 f = nabla df
inline SymTensorField hessian(const MetricField& m, const ScalarField& f) {
  require_same_grid(m.grid(), f.grid());
  const int d = m.dim();
  const auto& G = m.christoffel();
  const auto df = differential(f);
  std::vector<CovectorField> ddf;
  for (int a = 0; a < d; ++a) ddf.push_back(spectral_diff(df, a));
  SymTensorField out(m.grid());
  for (std::size_t p = 0; p < out.points(); ++p)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        double v = 0.5 * (ddf[static_cast<std::size_t>(i)](j, p) + ddf[static_cast<std::size_t>(j)](i, p));
        for (int k = 0; k < d; ++k) v -= G(k, i, j, p) * df(k, p);
        out.at(i, j, p) = v;
      }
  return out;
}

/// Nonnegative Laplacian: Delta f = -tr nabla^2 f.
inline ScalarField laplacian(const MetricField& m, const ScalarField& f) {
  auto t = trace(m, hessian(m, f));
  t *= -1.0;
  return t;
}

/// (L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k
inline SymTensorField lie_metric(const MetricField& m, const VectorField& x) {
  require_same_grid(m.grid(), x.grid());
  const int d = m.dim();
  std::vector<std::vector<std::vector<double>>> dx;  // dx[k][a] = d_a X^k
  for (int k = 0; k < d; ++k) dx.push_back(gradient_components(x.grid(), x.component(k)));
  SymTensorField out(m.grid());
  for (std::size_t p = 0; p < out.points(); ++p)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        double v = 0.0;
        for (int k = 0; k < d; ++k) {
          v += x(k, p) * m.dg(k).at(i, j, p);
          v += m.g().at(k, j, p) * dx[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)][p];
          v += m.g().at(i, k, p) * dx[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)][p];
        }
        out.at(i, j, p) = v;
      }
  return out;
}

/// Lichnerowicz Laplacian nabla* nabla sigma - 2 Rcirc sigma with
/// (Rcirc sigma)_ij = R_{ikjl} sigma^{kl}.
inline SymTensorField lichnerowicz(const MetricField& m, const SymTensorField& sigma) {
  require_same_grid(m.grid(), sigma.grid());
  const auto& grid = m.grid();
  const int d = m.dim();
  const int ns = component_count(FieldKind::sym_tensor, d);
  const auto& G = m.christoffel();
  const std::size_t np = grid.size();
  // T[k][sym(i,j)] = (nabla_k sigma)_ij
  std::vector<std::vector<double>> T(static_cast<std::size_t>(d * ns), std::vector<double>(np));
  std::vector<SymTensorField> ds;
  for (int a = 0; a < d; ++a) ds.push_back(spectral_diff(sigma, a));
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j)
        for (std::size_t p = 0; p < np; ++p) {
          double v = ds[static_cast<std::size_t>(k)].at(i, j, p);
          for (int l = 0; l < d; ++l)
            v -= G(l, k, i, p) * sigma.at(l, j, p) + G(l, k, j, p) * sigma.at(i, l, p);
          T[static_cast<std::size_t>(k * ns + sym_index(i, j, d))][p] = v;
        }
  auto t = [&](int k, int i, int j, std::size_t p) {
    return T[static_cast<std::size_t>(k * ns + sym_index(i, j, d))][p];
  };
  // dT[l][k*ns+sym] = d_l T
  std::vector<std::vector<std::vector<double>>> dT(static_cast<std::size_t>(d * ns));
  for (std::size_t c = 0; c < T.size(); ++c) dT[c] = gradient_components(grid, T[c]);
  const Curvature curv = curvature(m);
  SymTensorField out(grid);
  for (std::size_t p = 0; p < np; ++p)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        double lap = 0.0;
        for (int l = 0; l < d; ++l)
          for (int k = 0; k < d; ++k) {
            double v = dT[static_cast<std::size_t>(k * ns + sym_index(i, j, d))][static_cast<std::size_t>(l)][p];
            for (int q = 0; q < d; ++q)
              v -= G(q, l, k, p) * t(q, i, j, p) + G(q, l, i, p) * t(k, q, j, p) +
                   G(q, l, j, p) * t(k, i, q, p);
            lap += m.inverse().at(l, k, p) * v;
          }
        double rc = 0.0;
        for (int k = 0; k < d; ++k)
          for (int l = 0; l < d; ++l) {
            double sup = 0.0;
            for (int a = 0; a < d; ++a)
              for (int b = 0; b < d; ++b)
                sup += m.inverse().at(k, a, p) * m.inverse().at(l, b, p) * sigma.at(a, b, p);
            rc += curv.down(m, i, k, j, l, p) * sup;
          }
        out.at(i, j, p) = -lap - 2.0 * rc;
      }
  return out;
}

/// div^{g_s}(gdot_s) - d tr^{g_s}(gdot_s) for each sample of a metric curve.
inline FieldCurve<CovectorField> j_residual(const MetricCurve& curve) {
  curve.validate();
  const auto rate = s_derivative(curve);
  FieldCurve<CovectorField> out{curve.sgrid, {}, std::nullopt};
  for (int j = 0; j < curve.size(); ++j) {
    const MetricField m(curve[j]);
    auto div = divergence(m, rate[j]);
    div -= differential(trace(m, rate[j]));
    out.samples.push_back(std::move(div));
  }
  return out;
}

}  // namespace ppw
