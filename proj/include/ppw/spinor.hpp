#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ppw/gauge_flow.hpp"
#include "ppw/ppwave.hpp"

namespace ppw {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;

// ---------------------------------------------------------------------------
// Clifford model
// ---------------------------------------------------------------------------

/// Complex Clifford module for R^{n,1} restricted to a hypersurface with unit
/// normal nu inside and future normal e0. Generators are indexed as
/// 0 -> e0, 1 -> nu, 2.. -> leaf directions e_1..e_d; eta is the matching
/// signature (+1 for e0, -1 otherwise) so that a b + b a = 2 eta(a, b).
struct CliffordModel {
  int n = 0;     // dim of the hypersurface, d + 1
  int size = 0;  // spinor dimension
  CMat e0, nu;
  std::vector<CMat> e;  // leaf generators
  Eigen::MatrixXd eta;
  CMat constrained_basis;  // orthonormal columns spanning ker(nu + e0)

  int leaf_dim() const { return n - 1; }

  const CMat& generator(int a) const {
    if (a == 0) return e0;
    if (a == 1) return nu;
    return e[static_cast<std::size_t>(a - 2)];
  }

  /// Hypersurface orthonormal frame: 0 -> nu, 1..d -> leaf.
  const CMat& frame(int a) const { return a == 0 ? nu : e[static_cast<std::size_t>(a - 1)]; }

  double relation_residual() const {
    double r = 0.0;
    const int m = n + 1;
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        const CMat ac = generator(a) * generator(b) + generator(b) * generator(a) -
                        2.0 * eta(a, b) * CMat::Identity(size, size);
        r = std::max(r, ac.cwiseAbs().maxCoeff());
      }
    return r;
  }

  double adjointness_residual() const {
    double r = (e0 - e0.adjoint()).cwiseAbs().maxCoeff();
    r = std::max(r, (nu + nu.adjoint()).cwiseAbs().maxCoeff());
    for (const auto& g : e) r = std::max(r, (g + g.adjoint()).cwiseAbs().maxCoeff());
    return r;
  }
};

/// Leaf module Cl_d (squares -1) doubled by the 2x2 generators
/// sigma_1 (for e0) and -i sigma_2 (for nu).
inline CliffordModel build_clifford(int n) {
  if (n < 2 || n > 4) throw PreconditionError(Stage::spinor, "Clifford model supports 2 <= n <= 4");
  const cplx I(0.0, 1.0);
  const int d = n - 1;
  std::vector<CMat> leaf;
  if (d == 1) {
    leaf.push_back(CMat::Constant(1, 1, I));
  } else {
    CMat s1(2, 2), s2(2, 2), s3(2, 2);
    s1 << 0, 1, 1, 0;
    s2 << 0, -I, I, 0;
    s3 << 1, 0, 0, -1;
    leaf = {I * s1, I * s2};
    if (d == 3) leaf.push_back(I * s3);
  }
  const int m = static_cast<int>(leaf.front().rows());
  auto kron = [](const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
  };
  CMat x(2, 2), y(2, 2), z(2, 2);
  x << 0, 1, 1, 0;
  y << 0, -1, 1, 0;
  z << 1, 0, 0, -1;
  CliffordModel c;
  c.n = n;
  c.size = 2 * m;
  c.e0 = kron(x, CMat::Identity(m, m));
  c.nu = kron(y, CMat::Identity(m, m));
  for (const auto& g : leaf) c.e.push_back(kron(z, g));
  c.eta = Eigen::MatrixXd::Zero(n + 1, n + 1);
  c.eta(0, 0) = 1.0;
  for (int a = 1; a <= n; ++a) c.eta(a, a) = -1.0;
  c.constrained_basis = CMat::Zero(c.size, m);
  c.constrained_basis.bottomRows(m) = CMat::Identity(m, m);
  if (c.relation_residual() != 0.0) throw NumericalError(Stage::spinor, "Clifford relations fail");
  return c;
}

// ---------------------------------------------------------------------------
// Spinor fields
// ---------------------------------------------------------------------------

/// Spinor components on I x T^d: one (points x size) matrix per s-sample.
struct SpinorField {
  SGrid sgrid;
  TorusGrid grid;
  int size = 0;
  std::vector<CMat> samples;

  int count() const { return static_cast<int>(samples.size()); }
  const CMat& operator[](int j) const { return samples[static_cast<std::size_t>(j)]; }

  double max_abs() const {
    double m = 0.0;
    for (const auto& s : samples)
      if (s.size() > 0) m = std::max(m, s.cwiseAbs().maxCoeff());
    return m;
  }

  /// sup |(nu + e0) psi|
  double constraint_residual(const CliffordModel& c) const {
    const CMat P = (c.nu + c.e0).transpose();
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, (s * P).cwiseAbs().maxCoeff());
    return m;
  }
};

inline SpinorField zero_spinor(const SGrid& sg, const TorusGrid& grid, int size) {
  return {sg, grid, size, std::vector<CMat>(static_cast<std::size_t>(sg.size()), CMat::Zero(static_cast<Eigen::Index>(grid.size()), size))};
}

namespace detail {

/// Rows of psi times a matrix acting on the spinor index: psi_p -> M psi_p.
inline CMat act(const CMat& m, const CMat& psi) { return psi * m.transpose(); }

inline std::vector<CMat> spinor_gradient(const TorusGrid& grid, const CMat& psi) {
  const int d = grid.dim();
  const auto np = static_cast<Eigen::Index>(grid.size());
  std::vector<CMat> out(static_cast<std::size_t>(d), CMat(np, psi.cols()));
  std::vector<double> re(grid.size()), im(grid.size());
  for (Eigen::Index c = 0; c < psi.cols(); ++c) {
    for (Eigen::Index p = 0; p < np; ++p) {
      re[static_cast<std::size_t>(p)] = psi(p, c).real();
      im[static_cast<std::size_t>(p)] = psi(p, c).imag();
    }
    const auto gr = gradient_components(grid, re);
    const auto gi = gradient_components(grid, im);
    for (int a = 0; a < d; ++a)
      for (Eigen::Index p = 0; p < np; ++p)
        out[static_cast<std::size_t>(a)](p, c) =
            cplx(gr[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)], gi[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)]);
  }
  return out;
}

/// Fourth-order stencil weights (unscaled by 1/h) for the derivative at j.
inline std::vector<std::pair<int, double>> fd_stencil(int m, int j) {
  if (m < 5) throw PreconditionError(Stage::grid, "too few samples for a 4th-order stencil");
  const double r = 1.0 / 12.0;
  if (j >= 2 && j <= m - 3) return {{j - 2, r}, {j - 1, -8 * r}, {j + 1, 8 * r}, {j + 2, -r}};
  if (j == 0) return {{0, -25 * r}, {1, 48 * r}, {2, -36 * r}, {3, 16 * r}, {4, -3 * r}};
  if (j == 1) return {{0, -3 * r}, {1, -10 * r}, {2, 18 * r}, {3, -6 * r}, {4, r}};
  if (j == m - 1) return {{m - 1, 25 * r}, {m - 2, -48 * r}, {m - 3, 36 * r}, {m - 4, -16 * r}, {m - 5, 3 * r}};
  return {{m - 1, 3 * r}, {m - 2, 10 * r}, {m - 3, -18 * r}, {m - 4, 6 * r}, {m - 5, -r}};
}

inline SmallMat k_matrix(const InitialDataSet& ids, int j, std::size_t p) {
  const int d = ids.g[0].grid().dim();
  SmallMat k(d + 1, d + 1);
  k(0, 0) = ids.k_ss[j][p];
  for (int i = 0; i < d; ++i) {
    k(0, 1 + i) = k(1 + i, 0) = ids.k_si[j](i, p);
    for (int l = 0; l < d; ++l) k(1 + i, 1 + l) = ids.k_ij[j].at(i, l, p);
  }
  return k;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Geometry: frames and connection coefficients
// ---------------------------------------------------------------------------

/// Orthonormal frame nu = u d/ds, E_a = F(., a) with F = L^{-T} from the
/// Cholesky factor of g_s, and the coefficients of
/// nabla-bar_mu = d_mu + sum_{a<b} omega_ab(mu) 1/2 Ga Gb - 1/2 sum_b k(d_mu, E_b) e0 Gb
/// in the coordinates mu = (s, x^1..x^d).
class SpinorGeometry {
 public:
  explicit SpinorGeometry(InitialDataSet ids)
      : ids_(std::move(ids)), cl_(build_clifford(ids_.g[0].grid().dim() + 1)) {
    ids_.u.validate();
    ids_.g.validate();
    const SGrid& sg = ids_.sgrid;
    const TorusGrid& grid = this->grid();
    const int d = grid.dim();
    const int D = d + 1;
    const std::size_t np = grid.size();
    for (int a = 0; a < D; ++a)
      for (int b = a + 1; b < D; ++b) pairs_.emplace_back(a, b);
    ncoef_ = static_cast<int>(pairs_.size()) + D;
    for (const auto& [a, b] : pairs_) basis_.push_back(0.5 * cl_.frame(a) * cl_.frame(b));
    for (int b = 0; b < D; ++b) basis_.push_back(-0.5 * cl_.e0 * cl_.frame(b));

    const int m = sg.size();
    frames_.assign(static_cast<std::size_t>(m), std::vector<double>(np * static_cast<std::size_t>(d * d)));
    for (int j = 0; j < m; ++j)
      parallel::for_each_index(np, [&](std::size_t p) {
        const SmallMat g = matrix_at(ids_.g[j], p);
        Eigen::LLT<SmallMat> llt(g);
        if (llt.info() != Eigen::Success) throw NumericalError(Stage::spinor, "frame degeneracy: g_s is not positive definite");
        const SmallMat L = llt.matrixL();
        const SmallMat F = L.transpose().inverse();
        for (int i = 0; i < d; ++i)
          for (int a = 0; a < d; ++a) frames_[static_cast<std::size_t>(j)][p * static_cast<std::size_t>(d * d) + static_cast<std::size_t>(i * d + a)] = F(i, a);
      });

    const auto grate = s_derivative(ids_.g);
    std::vector<ScalarField> w;
    for (int j = 0; j < m; ++j) w.push_back(lapse_coefficient(ids_.u[j]));
    const auto wrate = fd_derivative(w, sg.step());
    const auto urate = s_derivative(ids_.u);
    coef_.assign(static_cast<std::size_t>(m), std::vector<double>(np * static_cast<std::size_t>(D * ncoef_)));
    for (int j = 0; j < m; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      const auto jets = detail::gamma_jets(w[uj], wrate[uj], ids_.g[j], grate[j]);
      const auto du = gradient_components(grid, ids_.u[j].component(0));
      std::vector<std::vector<std::vector<double>>> dF;  // [i*d+a][axis][p]
      std::vector<double> comp(np);
      for (int c = 0; c < d * d; ++c) {
        for (std::size_t p = 0; p < np; ++p) comp[p] = frames_[uj][p * static_cast<std::size_t>(d * d) + static_cast<std::size_t>(c)];
        dF.push_back(gradient_components(grid, comp));
      }
      const auto st = detail::fd_stencil(m, j);
      parallel::for_each_index(np, [&](std::size_t p) {
        // E[a] as (d+1)-vectors, dE[mu][a]
        std::vector<SmallVec> E(static_cast<std::size_t>(D), SmallVec::Zero(D));
        std::vector<std::vector<SmallVec>> dE(static_cast<std::size_t>(D), E);
        E[0](0) = ids_.u[j][p];
        dE[0][0](0) = urate[j][p];
        for (int i = 0; i < d; ++i) dE[static_cast<std::size_t>(1 + i)][0](0) = du[static_cast<std::size_t>(i)][p];
        for (int a = 0; a < d; ++a)
          for (int i = 0; i < d; ++i) {
            const auto c = static_cast<std::size_t>(i * d + a);
            E[static_cast<std::size_t>(1 + a)](1 + i) = frames_[uj][p * static_cast<std::size_t>(d * d) + c];
            double fs = 0.0;
            for (const auto& [jj, wgt] : st) fs += wgt * frames_[static_cast<std::size_t>(jj)][p * static_cast<std::size_t>(d * d) + c];
            dE[0][static_cast<std::size_t>(1 + a)](1 + i) = fs / sg.step();
            for (int x = 0; x < d; ++x) dE[static_cast<std::size_t>(1 + x)][static_cast<std::size_t>(1 + a)](1 + i) = dF[c][static_cast<std::size_t>(x)][p];
          }
        const SmallMat& gam = jets[p].gamma;
        const SmallMat gi = gam.inverse();
        const SmallMat K = detail::k_matrix(ids_, j, p);
        double* out = &coef_[uj][p * static_cast<std::size_t>(D * ncoef_)];
        for (int mu = 0; mu < D; ++mu) {
          std::vector<SmallVec> nabE(static_cast<std::size_t>(D));
          for (int a = 0; a < D; ++a) {
            SmallVec v = dE[static_cast<std::size_t>(mu)][static_cast<std::size_t>(a)];
            for (int l = 0; l < D; ++l)
              for (int r = 0; r < D; ++r) v(l) += jets[p].christoffel(gi, l, mu, r) * E[static_cast<std::size_t>(a)](r);
            nabE[static_cast<std::size_t>(a)] = v;
          }
          double* o = out + mu * ncoef_;
          int c = 0;
          for (const auto& [a, b] : pairs_)
            o[c++] = nabE[static_cast<std::size_t>(a)].dot(gam * E[static_cast<std::size_t>(b)]);
          for (int b = 0; b < D; ++b) o[c++] = K.row(mu).dot(E[static_cast<std::size_t>(b)]);
        }
      });
    }
  }

  const InitialDataSet& ids() const { return ids_; }
  const CliffordModel& clifford() const { return cl_; }
  const SGrid& sgrid() const { return ids_.sgrid; }
  const TorusGrid& grid() const { return ids_.g[0].grid(); }
  int dim() const { return grid().dim(); }
  int coefficient_count() const { return ncoef_; }
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }
  const std::vector<CMat>& basis() const { return basis_; }

  double u(int j, std::size_t p) const { return ids_.u[j][p]; }

  /// F(i, a): coordinate i of the leaf frame vector E_a.
  double frame(int j, std::size_t p, int i, int a) const {
    const int d = dim();
    return frames_[static_cast<std::size_t>(j)][p * static_cast<std::size_t>(d * d) + static_cast<std::size_t>(i * d + a)];
  }

  const double* coefficients(int j, std::size_t p, int mu) const {
    return &coef_[static_cast<std::size_t>(j)][(p * static_cast<std::size_t>(dim() + 1) + static_cast<std::size_t>(mu)) * static_cast<std::size_t>(ncoef_)];
  }

  CMat combine(const double* c) const {
    CMat A = CMat::Zero(cl_.size, cl_.size);
    for (int i = 0; i < ncoef_; ++i)
      if (c[i] != 0.0) A += c[i] * basis_[static_cast<std::size_t>(i)];
    return A;
  }

  /// A_mu with nabla-bar_{d_mu} = d_mu + A_mu.
  CMat connection(int j, std::size_t p, int mu) const { return combine(coefficients(j, p, mu)); }

  /// Leaf spin connection of g_s in direction d_{x^i} (pairs inside the leaf only).
  CMat leaf_connection(int j, std::size_t p, int i) const {
    const double* c = coefficients(j, p, 1 + i);
    CMat A = CMat::Zero(cl_.size, cl_.size);
    for (std::size_t q = 0; q < pairs_.size(); ++q)
      if (pairs_[q].first > 0) A += c[q] * basis_[q];
    return A;
  }

  /// A_s at an arbitrary s by Lagrange interpolation of the coefficients.
  CMat connection_s(double s, std::size_t p) const {
    auto [first, w] = lagrange_weights(sgrid(), s, 4);
    std::vector<double> c(static_cast<std::size_t>(ncoef_), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double* ci = coefficients(first + static_cast<int>(i), p, 0);
      for (int q = 0; q < ncoef_; ++q) c[static_cast<std::size_t>(q)] += w[i] * ci[q];
    }
    return combine(c.data());
  }

 private:
  InitialDataSet ids_;
  CliffordModel cl_;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<CMat> basis_;
  int ncoef_ = 0;
  std::vector<std::vector<double>> frames_;
  std::vector<std::vector<double>> coef_;
};

namespace detail {

inline void require_compatible(const SpinorGeometry& geo, const SpinorField& psi) {
  if (!(psi.sgrid == geo.sgrid()) || !(psi.grid == geo.grid()) || psi.size != geo.clifford().size ||
      psi.count() != geo.sgrid().size())
    throw PreconditionError(Stage::spinor, "spinor field does not match the geometry");
}

/// nabla-bar of psi at sample j along the frame: [0] = nu, [a] = E_a.
inline std::vector<CMat> frame_nabla(const SpinorGeometry& geo, const SpinorField& psi, int j) {
  const TorusGrid& grid = geo.grid();
  const int d = grid.dim();
  const int m = geo.sgrid().size();
  const auto np = grid.size();
  CMat ds = CMat::Zero(static_cast<Eigen::Index>(np), psi.size);
  for (const auto& [jj, w] : fd_stencil(m, j)) ds += (w / geo.sgrid().step()) * psi[jj];
  const auto dx = spinor_gradient(grid, psi[j]);
  std::vector<CMat> out(static_cast<std::size_t>(d + 1), CMat(static_cast<Eigen::Index>(np), psi.size));
  parallel::for_each_index(np, [&](std::size_t p) {
    const auto r = static_cast<Eigen::Index>(p);
    const Eigen::VectorXcd v = psi[j].row(r).transpose();
    std::vector<Eigen::VectorXcd> coord;
    coord.push_back(ds.row(r).transpose() + geo.connection(j, p, 0) * v);
    for (int i = 0; i < d; ++i)
      coord.push_back(dx[static_cast<std::size_t>(i)].row(r).transpose() + geo.connection(j, p, 1 + i) * v);
    out[0].row(r) = geo.u(j, p) * coord[0].transpose();
    for (int a = 0; a < d; ++a) {
      Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(psi.size);
      for (int i = 0; i < d; ++i) acc += geo.frame(j, p, i, a) * coord[static_cast<std::size_t>(1 + i)];
      out[static_cast<std::size_t>(1 + a)].row(r) = acc.transpose();
    }
  });
  return out;
}

inline CMat dirac_sample(const SpinorGeometry& geo, const std::vector<CMat>& nab) {
  CMat out = CMat::Zero(nab[0].rows(), nab[0].cols());
  for (std::size_t a = 0; a < nab.size(); ++a) out += act(geo.clifford().frame(static_cast<int>(a)), nab[a]);
  return out;
}

inline CMat leaf_dirac_sample(const SpinorGeometry& geo, const std::vector<CMat>& nab) {
  CMat out = CMat::Zero(nab[0].rows(), nab[0].cols());
  for (std::size_t a = 1; a < nab.size(); ++a) out += act(geo.clifford().frame(static_cast<int>(a)), nab[a]);
  return out;
}

/// int <a, b> w dvol^{g_s} over the leaf at sample j.
inline cplx leaf_pairing(const SpinorGeometry& geo, int j, const CMat& a, const CMat& b, const ScalarField& weight) {
  const MetricField m(geo.ids().g[j]);
  const auto np = a.rows();
  cplx acc = 0.0;
  for (Eigen::Index p = 0; p < np; ++p)
    acc += b.row(p).dot(a.row(p)) * weight[static_cast<std::size_t>(p)] * m.sqrt_det()[static_cast<std::size_t>(p)];
  return acc / static_cast<double>(np);
}

inline ScalarField inverse_lapse(const SpinorGeometry& geo, int j) {
  ScalarField w(geo.grid());
  for (std::size_t p = 0; p < w.points(); ++p) w[p] = 1.0 / geo.u(j, p);
  return w;
}

}  // namespace detail

/// nabla-bar_X psi for X = nu (direction 0) or the leaf frame vector E_a (direction a).
inline SpinorField hypersurface_nabla(const SpinorGeometry& geo, const SpinorField& psi, int direction) {
  detail::require_compatible(geo, psi);
  if (direction < 0 || direction > geo.dim()) throw PreconditionError(Stage::spinor, "direction out of range");
  SpinorField out{psi.sgrid, psi.grid, psi.size, {}};
  for (int j = 0; j < psi.count(); ++j) out.samples.push_back(detail::frame_nabla(geo, psi, j)[static_cast<std::size_t>(direction)]);
  return out;
}

/// Leaf spinor connection of g_s along E_a applied to psi at sample j.
inline CMat leaf_nabla(const SpinorGeometry& geo, const CMat& psi, int j, int a) {
  const int d = geo.dim();
  const auto dx = detail::spinor_gradient(geo.grid(), psi);
  CMat out(psi.rows(), psi.cols());
  parallel::for_each_index(geo.grid().size(), [&](std::size_t p) {
    const auto r = static_cast<Eigen::Index>(p);
    const Eigen::VectorXcd v = psi.row(r).transpose();
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(psi.cols());
    for (int i = 0; i < d; ++i)
      acc += geo.frame(j, p, i, a - 1) * (dx[static_cast<std::size_t>(i)].row(r).transpose() + geo.leaf_connection(j, p, i) * v);
    out.row(r) = acc.transpose();
  });
  return out;
}

/// sup over leaf directions of |nabla-bar psi - sqrt(u) nabla^Q(psi / sqrt(u))| at sample j.
inline double rescaling_residual(const SpinorGeometry& geo, const SpinorField& psi, int j) {
  detail::require_compatible(geo, psi);
  const auto nab = detail::frame_nabla(geo, psi, j);
  CMat scaled = psi[j];
  for (Eigen::Index p = 0; p < scaled.rows(); ++p) scaled.row(p) /= std::sqrt(geo.u(j, static_cast<std::size_t>(p)));
  double r = 0.0;
  for (int a = 1; a <= geo.dim(); ++a) {
    CMat rhs = leaf_nabla(geo, scaled, j, a);
    for (Eigen::Index p = 0; p < rhs.rows(); ++p) rhs.row(p) *= std::sqrt(geo.u(j, static_cast<std::size_t>(p)));
    r = std::max(r, (nab[static_cast<std::size_t>(a)] - rhs).cwiseAbs().maxCoeff());
  }
  return r;
}

/// Dirac-Witten operator sum_a Ga nabla-bar_{E_a} psi over the frame of M
/// (nu included).
inline SpinorField dirac_witten(const SpinorGeometry& geo, const SpinorField& psi) {
  detail::require_compatible(geo, psi);
  SpinorField out{psi.sgrid, psi.grid, psi.size, {}};
  for (int j = 0; j < psi.count(); ++j) out.samples.push_back(detail::dirac_sample(geo, detail::frame_nabla(geo, psi, j)));
  return out;
}

/// Leaf part of the Dirac-Witten operator (no nu term).
inline SpinorField leaf_dirac_witten(const SpinorGeometry& geo, const SpinorField& psi) {
  detail::require_compatible(geo, psi);
  SpinorField out{psi.sgrid, psi.grid, psi.size, {}};
  for (int j = 0; j < psi.count(); ++j) out.samples.push_back(detail::leaf_dirac_sample(geo, detail::frame_nabla(geo, psi, j)));
  return out;
}

/// int <a, b> u^{-1} dvol over the leaf at sample j.
inline cplx leaf_inner(const SpinorGeometry& geo, int j, const CMat& a, const CMat& b) {
  return detail::leaf_pairing(geo, j, a, b, detail::inverse_lapse(geo, j));
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

struct TransportOptions {
  int substeps = 2;
  double parallel_tol = 1e-8;  // initial leafwise parallelism
  double unit_tol = 1e-10;     // | |phi| - 1 |
  double j_tol = 1e-6;         // sup |div gdot - d tr gdot| before warning
  std::optional<double> anchor;
};

struct TransportResult {
  SpinorField psi;
  double initial_parallel = 0.0;
  double j_residual = 0.0;
  std::vector<std::string> warnings;
};

/// Sets psi = sqrt(u) phi in the constrained subspace at the anchor and solves
/// nabla-bar_{d_s} psi = 0 pointwise with RK4. phi holds leaf spinor
/// components (points x size/2); the default is the first basis spinor.
inline TransportResult transport(const SpinorGeometry& geo, const std::optional<CMat>& phi = std::nullopt,
                                 const TransportOptions& opt = {}) {
  const CliffordModel& cl = geo.clifford();
  const SGrid& sg = geo.sgrid();
  const TorusGrid& grid = geo.grid();
  const auto np = static_cast<Eigen::Index>(grid.size());
  const int half = cl.size / 2;
  const int anchor = detail::anchor_index(sg, opt.anchor.value_or(sg.start()));

  CMat leaf = phi.value_or(CMat());
  if (!phi) {
    leaf = CMat::Zero(np, half);
    leaf.col(0).setOnes();
  }
  if (leaf.rows() != np || leaf.cols() != half) throw PreconditionError(Stage::spinor, "initial spinor has the wrong shape");
  for (Eigen::Index p = 0; p < np; ++p)
    if (std::abs(leaf.row(p).norm() - 1.0) > opt.unit_tol) throw PreconditionError(Stage::spinor, "initial spinor is not unit");
  const CMat embedded = leaf * cl.constrained_basis.transpose();

  TransportResult res{zero_spinor(sg, grid, cl.size), 0.0, 0.0, {}};
  for (int a = 1; a <= geo.dim(); ++a)
    res.initial_parallel = std::max(res.initial_parallel, leaf_nabla(geo, embedded, anchor, a).cwiseAbs().maxCoeff());
  if (!(res.initial_parallel <= opt.parallel_tol)) {
    std::ostringstream os;
    os << "initial spinor is not leafwise parallel: sup |nabla phi| = " << res.initial_parallel;
    throw PreconditionError(Stage::spinor, os.str());
  }
  for (const auto& r : j_residual(geo.ids().g).samples) res.j_residual = std::max(res.j_residual, r.max_abs());
  if (res.j_residual > opt.j_tol) {
    std::ostringstream os;
    os << "j-equation residual " << res.j_residual << " exceeds " << opt.j_tol << "; parallelism is not guaranteed";
    res.warnings.push_back(os.str());
  }

  CMat start = embedded;
  for (Eigen::Index p = 0; p < np; ++p) start.row(p) *= std::sqrt(geo.u(anchor, static_cast<std::size_t>(p)));
  res.psi.samples[static_cast<std::size_t>(anchor)] = start;
  parallel::for_each_index(grid.size(), [&](std::size_t p) {
    const auto r = static_cast<Eigen::Index>(p);
    for (int dir : {1, -1}) {
      Eigen::VectorXcd y = start.row(r).transpose();
      const double h = dir * sg.step() / opt.substeps;
      auto rate = [&](double s, const Eigen::VectorXcd& v) -> Eigen::VectorXcd { return -(geo.connection_s(s, p) * v); };
      for (int j = anchor; j + dir >= 0 && j + dir < sg.size(); j += dir) {
        double s = sg.at(j);
        for (int k = 0; k < opt.substeps; ++k) {
          const Eigen::VectorXcd k1 = rate(s, y);
          const Eigen::VectorXcd k2 = rate(s + 0.5 * h, y + 0.5 * h * k1);
          const Eigen::VectorXcd k3 = rate(s + 0.5 * h, y + 0.5 * h * k2);
          const Eigen::VectorXcd k4 = rate(s + h, y + h * k3);
          y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
          s += h;
        }
        res.psi.samples[static_cast<std::size_t>(j + dir)].row(r) = y.transpose();
      }
    }
  });
  return res;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Riemannian current U with gamma(U, X) = <e0 X psi, psi> and the Lorentzian
/// current V = |psi|^2 e0 - U. Coordinates are (s, x^1..x^d); V carries its e0
/// component first.
struct DiracCurrents {
  std::vector<Eigen::VectorXd> norm_sq;  // per sample, per point
  std::vector<Eigen::MatrixXd> U;        // points x (d+1)
  std::vector<Eigen::MatrixXd> V;        // points x (d+2)
};

inline DiracCurrents dirac_currents(const SpinorGeometry& geo, const SpinorField& psi) {
  detail::require_compatible(geo, psi);
  const CliffordModel& cl = geo.clifford();
  const int d = geo.dim();
  DiracCurrents out;
  for (int j = 0; j < psi.count(); ++j) {
    const auto np = psi[j].rows();
    Eigen::VectorXd n2(np);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(np, d + 1), V(np, d + 2);
    for (Eigen::Index r = 0; r < np; ++r) {
      const auto p = static_cast<std::size_t>(r);
      const Eigen::VectorXcd v = psi[j].row(r).transpose();
      n2(r) = v.squaredNorm();
      for (int a = 0; a <= d; ++a) {
        const double c = v.dot(cl.e0 * cl.frame(a) * v).real();  // frame component of U
        if (a == 0) {
          U(r, 0) += c * geo.u(j, p);
        } else {
          for (int i = 0; i < d; ++i) U(r, 1 + i) += c * geo.frame(j, p, i, a - 1);
        }
      }
      V(r, 0) = n2(r);
      V.row(r).tail(d + 1) = -U.row(r);
    }
    out.norm_sq.push_back(std::move(n2));
    out.U.push_back(std::move(U));
    out.V.push_back(std::move(V));
  }
  return out;
}

struct LichnerowiczTerms {
  double dirac = 0.0;   // int |D psi|^2 / u
  double nabla = 0.0;   // int |nabla-bar psi|^2 / u
  double scalar = 0.0;  // 1/4 int scal |psi|^2 / u
  double residual() const { return dirac - nabla - scalar; }
};

/// Leaf integrals of the Lichnerowicz identity at sample j with dvol^{g_s}.
inline LichnerowiczTerms lichnerowicz_identity(const SpinorGeometry& geo, const SpinorField& psi, int j) {
  detail::require_compatible(geo, psi);
  const auto nab = detail::frame_nabla(geo, psi, j);
  const ScalarField w = detail::inverse_lapse(geo, j);
  const CMat D = detail::dirac_sample(geo, nab);
  LichnerowiczTerms t;
  t.dirac = detail::leaf_pairing(geo, j, D, D, w).real();
  for (const auto& n : nab) t.nabla += detail::leaf_pairing(geo, j, n, n, w).real();
  const MetricField m(geo.ids().g[j]);
  const ScalarField scal = curvature(m).scalar();
  ScalarField ws = w * scal;
  t.scalar = 0.25 * detail::leaf_pairing(geo, j, psi[j], psi[j], ws).real();
  return t;
}

/// Three expressions of the leaf momentum density in coordinates x^i and the
/// two sides of the spinorial curvature identity at sample j.
struct JeqIdentity {
  CovectorField trace_expr;  // tr((nabla k)(X, .) - nabla_X k) over the leaf
  CovectorField j_expr;      // (div k - d tr k)(X) for gamma
  CovectorField rate_expr;   // -1/2 u (div gdot - d tr gdot)(X)
  CMat lhs;                  // sum_i e_i R-bar(nu, e_i) psi
  CMat rhs;                  // 1/2 sum_i T(e_i) e_i psi
  double max_lhs() const { return lhs.size() ? lhs.cwiseAbs().maxCoeff() : 0.0; }
  double max_rhs() const { return rhs.size() ? rhs.cwiseAbs().maxCoeff() : 0.0; }
  double residual() const { return (lhs - rhs).size() ? (lhs - rhs).cwiseAbs().maxCoeff() : 0.0; }
  double expression_spread() const {
    return std::max({(trace_expr - j_expr).max_abs(), (j_expr - rate_expr).max_abs(), (trace_expr - rate_expr).max_abs()});
  }
};

inline JeqIdentity jeq_spinor_identity(const SpinorGeometry& geo, const SpinorField& psi, int j) {
  detail::require_compatible(geo, psi);
  const InitialDataSet& ids = geo.ids();
  const SGrid& sg = geo.sgrid();
  const TorusGrid& grid = geo.grid();
  const int d = grid.dim();
  const int D = d + 1;
  const int m = sg.size();
  const std::size_t np = grid.size();
  const int nc = geo.coefficient_count();
  const auto st = detail::fd_stencil(m, j);

  // d_s of A_i and d_i of A_s through the coefficients
  std::vector<std::vector<double>> cs(static_cast<std::size_t>(nc), std::vector<double>(np));
  for (int q = 0; q < nc; ++q)
    for (std::size_t p = 0; p < np; ++p) cs[static_cast<std::size_t>(q)][p] = geo.coefficients(j, p, 0)[q];
  std::vector<std::vector<std::vector<double>>> dcs;  // [q][axis][p]
  for (const auto& c : cs) dcs.push_back(gradient_components(grid, c));

  // k jets
  std::vector<ScalarField> w;
  for (int jj = 0; jj < m; ++jj) w.push_back(lapse_coefficient(ids.u[jj]));
  const auto grate = s_derivative(ids.g);
  const ScalarField wrate = fd_derivative_at(w, sg.step(), j);
  const auto jets = detail::gamma_jets(w[static_cast<std::size_t>(j)], wrate, ids.g[j], grate[j]);
  std::vector<std::vector<double>> kc(static_cast<std::size_t>(D * D), std::vector<double>(np));
  for (std::size_t p = 0; p < np; ++p) {
    const SmallMat K = detail::k_matrix(ids, j, p);
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b) kc[static_cast<std::size_t>(a * D + b)][p] = K(a, b);
  }
  std::vector<std::vector<std::vector<double>>> dk;  // [ab][axis][p]
  for (const auto& c : kc) dk.push_back(gradient_components(grid, c));

  const MetricField mf(ids.g[j]);
  CovectorField rate_expr = divergence(mf, grate[j]);
  rate_expr -= differential(trace(mf, grate[j]));
  for (int i = 0; i < d; ++i)
    for (std::size_t p = 0; p < np; ++p) rate_expr(i, p) *= -0.5 * ids.u[j][p];

  JeqIdentity out{CovectorField(grid), CovectorField(grid), std::move(rate_expr),
                  CMat::Zero(static_cast<Eigen::Index>(np), psi.size), CMat::Zero(static_cast<Eigen::Index>(np), psi.size)};
  const CliffordModel& cl = geo.clifford();
  parallel::for_each_index(np, [&](std::size_t p) {
    const SmallMat& gam = jets[p].gamma;
    const SmallMat gi = gam.inverse();
    std::vector<SmallMat> dK(static_cast<std::size_t>(D), SmallMat(D, D));
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b) {
        double ks = 0.0;
        for (const auto& [jj, wt] : st) ks += wt * detail::k_matrix(ids, jj, p)(a, b);
        dK[0](a, b) = ks / sg.step();
        for (int x = 0; x < d; ++x) dK[static_cast<std::size_t>(1 + x)](a, b) = dk[static_cast<std::size_t>(a * D + b)][static_cast<std::size_t>(x)][p];
      }
    const SmallMat K = detail::k_matrix(ids, j, p);
    // (nabla_mu k)_{ab}
    auto nk = [&](int mu, int a, int b) {
      double v = dK[static_cast<std::size_t>(mu)](a, b);
      for (int l = 0; l < D; ++l)
        v -= jets[p].christoffel(gi, l, mu, a) * K(l, b) + jets[p].christoffel(gi, l, mu, b) * K(a, l);
      return v;
    };
    SmallVec T = SmallVec::Zero(d);
    for (int i = 0; i < d; ++i) {
      double t = 0.0, jj = 0.0;
      for (int a = 0; a < D; ++a)
        for (int b = 0; b < D; ++b) {
          const double term = nk(a, b, 1 + i) - nk(1 + i, a, b);
          jj += gi(a, b) * term;
          if (a > 0 && b > 0) t += mf.inverse().at(a - 1, b - 1, p) * term;
        }
      out.trace_expr(i, p) = t;
      out.j_expr(i, p) = jj;
      T(i) = t;
    }
    // curvature of nabla-bar: R(d_s, d_i) = d_s A_i - d_i A_s + [A_s, A_i]
    const CMat As = geo.connection(j, p, 0);
    const auto r = static_cast<Eigen::Index>(p);
    const Eigen::VectorXcd v = psi[j].row(r).transpose();
    Eigen::VectorXcd lhs = Eigen::VectorXcd::Zero(psi.size), rhs = lhs;
    std::vector<CMat> R;
    for (int i = 0; i < d; ++i) {
      std::vector<double> dsAi(static_cast<std::size_t>(nc), 0.0), diAs(static_cast<std::size_t>(nc));
      for (const auto& [jj, wt] : st) {
        const double* c = geo.coefficients(jj, p, 1 + i);
        for (int q = 0; q < nc; ++q) dsAi[static_cast<std::size_t>(q)] += wt * c[q] / sg.step();
      }
      for (int q = 0; q < nc; ++q) diAs[static_cast<std::size_t>(q)] = dcs[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)][p];
      const CMat Ai = geo.connection(j, p, 1 + i);
      R.push_back(geo.combine(dsAi.data()) - geo.combine(diAs.data()) + As * Ai - Ai * As);
    }
    for (int a = 0; a < d; ++a) {
      Eigen::VectorXcd Rv = Eigen::VectorXcd::Zero(psi.size);
      double Ta = 0.0;
      for (int i = 0; i < d; ++i) {
        Rv += geo.frame(j, p, i, a) * (R[static_cast<std::size_t>(i)] * v);
        Ta += geo.frame(j, p, i, a) * T(i);
      }
      lhs += geo.u(j, p) * (cl.frame(1 + a) * Rv);
      rhs += 0.5 * Ta * (cl.frame(1 + a) * v);
    }
    out.lhs.row(r) = lhs.transpose();
    out.rhs.row(r) = rhs.transpose();
  });
  return out;
}

/// Per-sample transport diagnostics.
struct SpinorProfile {
  std::vector<double> s, G, nabla, constraint, norm_drift;
};

/// G(s) = int |D psi|^2 / u over each leaf, sup |nabla-bar psi|, constraint
/// residual and sup | |psi|^2/u - 1 |.
inline SpinorProfile spinor_profile(const SpinorGeometry& geo, const SpinorField& psi) {
  detail::require_compatible(geo, psi);
  const CliffordModel& cl = geo.clifford();
  const CMat P = (cl.nu + cl.e0).transpose();
  SpinorProfile out;
  for (int j = 0; j < psi.count(); ++j) {
    const auto nab = detail::frame_nabla(geo, psi, j);
    const CMat D = detail::dirac_sample(geo, nab);
    out.s.push_back(geo.sgrid().at(j));
    out.G.push_back(leaf_inner(geo, j, D, D).real());
    double n = 0.0;
    for (const auto& x : nab) n = std::max(n, x.cwiseAbs().maxCoeff());
    out.nabla.push_back(n);
    out.constraint.push_back((psi[j] * P).cwiseAbs().maxCoeff());
    double drift = 0.0;
    for (Eigen::Index r = 0; r < psi[j].rows(); ++r)
      drift = std::max(drift, std::abs(psi[j].row(r).squaredNorm() / geo.u(j, static_cast<std::size_t>(r)) - 1.0));
    out.norm_drift.push_back(drift);
  }
  return out;
}

inline void write_csv(const SpinorProfile& prof, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(Stage::io, "cannot write " + path);
  os.precision(17);
  os << "s,G,nabla_sup,constraint\n";
  for (std::size_t j = 0; j < prof.s.size(); ++j)
    os << prof.s[j] << ',' << prof.G[j] << ',' << prof.nabla[j] << ',' << prof.constraint[j] << '\n';
}

}  // namespace ppw
