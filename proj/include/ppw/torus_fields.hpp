#pragma once

#include <Eigen/Dense>
#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "ppw/error.hpp"
#include "ppw/parallel.hpp"

namespace ppw {

using cplx = std::complex<double>;
using Point = std::array<double, 3>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Uniform periodic grid on the unit torus R^d / Z^d.
///
/// Points are stored row-major with axis 0 slowest; the coordinate of index
/// i along an axis is i / N.
class TorusGrid {
 public:
  TorusGrid(int dim, int points) : dim_(dim), n_(points) {
    if (dim < 1 || dim > 3) {
      throw PreconditionError(Stage::grid, "torus dimension must be 1, 2 or 3");
    }
    if (points < 8 || !std::has_single_bit(static_cast<unsigned>(points))) {
      throw PreconditionError(Stage::grid,
                              "points per axis must be a power of two >= 8");
    }
    size_ = 1;
    for (int a = 0; a < dim; ++a) size_ *= static_cast<std::size_t>(points);
  }

  int dim() const noexcept { return dim_; }
  int points() const noexcept { return n_; }
  std::size_t size() const noexcept { return size_; }
  double spacing() const noexcept { return 1.0 / n_; }

  std::size_t stride(int axis) const noexcept {
    std::size_t s = 1;
    for (int a = dim_ - 1; a > axis; --a) s *= static_cast<std::size_t>(n_);
    return s;
  }

  std::array<int, 3> multi_index(std::size_t flat) const noexcept {
    std::array<int, 3> idx{0, 0, 0};
    for (int a = dim_ - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(flat % static_cast<std::size_t>(n_));
      flat /= static_cast<std::size_t>(n_);
    }
    return idx;
  }

  std::size_t flat_index(std::array<int, 3> idx) const noexcept {
    std::size_t flat = 0;
    for (int a = 0; a < dim_; ++a) {
      int i = idx[a] % n_;
      if (i < 0) i += n_;
      flat = flat * static_cast<std::size_t>(n_) + static_cast<std::size_t>(i);
    }
    return flat;
  }

  Point coordinate(std::size_t flat) const noexcept {
    const auto idx = multi_index(flat);
    Point x{0.0, 0.0, 0.0};
    for (int a = 0; a < dim_; ++a) x[a] = static_cast<double>(idx[a]) / n_;
    return x;
  }

  friend bool operator==(const TorusGrid&, const TorusGrid&) = default;

 private:
  int dim_;
  int n_;
  std::size_t size_ = 0;
};

inline void require_same_grid(const TorusGrid& a, const TorusGrid& b) {
  if (!(a == b)) throw PreconditionError(Stage::grid, "grid mismatch");
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

enum class FieldKind { scalar, vector, covector, sym_tensor };

constexpr int component_count(FieldKind kind, int dim) {
  switch (kind) {
    case FieldKind::scalar: return 1;
    case FieldKind::vector:
    case FieldKind::covector: return dim;
    case FieldKind::sym_tensor: return dim * (dim + 1) / 2;
  }
  return 0;
}

/// Packed index of the (i,j) entry of a symmetric d x d matrix.
constexpr int sym_index(int i, int j, int dim) {
  if (i > j) std::swap(i, j);
  return i * dim - i * (i - 1) / 2 + (j - i);
}

/// Component arrays over a TorusGrid, stored component-major.
template <FieldKind K>
class Field {
 public:
  static constexpr FieldKind kind = K;

  Field() = default;
  explicit Field(const TorusGrid& grid, double fill = 0.0)
      : grid_(grid),
        data_(static_cast<std::size_t>(component_count(K, grid.dim())) * grid.size(),
              fill) {}

  const TorusGrid& grid() const { return *grid_; }
  bool empty() const { return !grid_.has_value(); }
  int components() const { return component_count(K, grid_->dim()); }
  std::size_t points() const { return grid_->size(); }

  std::span<double> component(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * points(), points()};
  }
  std::span<const double> component(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * points(), points()};
  }

  double& operator()(int c, std::size_t p) {
    return data_[static_cast<std::size_t>(c) * points() + p];
  }
  double operator()(int c, std::size_t p) const {
    return data_[static_cast<std::size_t>(c) * points() + p];
  }

  /// Symmetric tensor entry (i,j) at point p.
  double& at(int i, int j, std::size_t p)
    requires(K == FieldKind::sym_tensor)
  {
    return (*this)(sym_index(i, j, grid_->dim()), p);
  }
  double at(int i, int j, std::size_t p) const
    requires(K == FieldKind::sym_tensor)
  {
    return (*this)(sym_index(i, j, grid_->dim()), p);
  }

  double& operator[](std::size_t p)
    requires(K == FieldKind::scalar)
  {
    return data_[p];
  }
  double operator[](std::size_t p) const
    requires(K == FieldKind::scalar)
  {
    return data_[p];
  }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  Field& operator+=(const Field& o) {
    require_same_grid(grid(), o.grid());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    require_same_grid(grid(), o.grid());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Field& operator*=(double a) {
    for (auto& v : data_) v *= a;
    return *this;
  }
  /// this += a * o
  Field& axpy(double a, const Field& o) {
    require_same_grid(grid(), o.grid());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::optional<TorusGrid> grid_;
  std::vector<double> data_;
};

using ScalarField = Field<FieldKind::scalar>;
using VectorField = Field<FieldKind::vector>;
using CovectorField = Field<FieldKind::covector>;
using SymTensorField = Field<FieldKind::sym_tensor>;

template <FieldKind K>
Field<K> operator+(Field<K> a, const Field<K>& b) {
  return a += b;
}
template <FieldKind K>
Field<K> operator-(Field<K> a, const Field<K>& b) {
  return a -= b;
}
template <FieldKind K>
Field<K> operator*(double s, Field<K> a) {
  return a *= s;
}
/// Pointwise product with a scalar field.
template <FieldKind K>
Field<K> operator*(const ScalarField& s, Field<K> a) {
  require_same_grid(s.grid(), a.grid());
  for (int c = 0; c < a.components(); ++c) {
    auto comp = a.component(c);
    for (std::size_t p = 0; p < comp.size(); ++p) comp[p] *= s[p];
  }
  return a;
}

template <class Fn>
ScalarField sample_scalar(const TorusGrid& grid, Fn&& fn) {
  ScalarField f(grid);
  for (std::size_t p = 0; p < grid.size(); ++p) f[p] = fn(grid.coordinate(p));
  return f;
}

/// Constant symmetric tensor field from a row-major d x d matrix.
inline SymTensorField constant_tensor(const TorusGrid& grid,
                                      std::span<const double> matrix) {
  const int d = grid.dim();
  SymTensorField t(grid);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      auto comp = t.component(sym_index(i, j, d));
      std::fill(comp.begin(), comp.end(), matrix[static_cast<std::size_t>(i * d + j)]);
    }
  return t;
}

inline SymTensorField identity_tensor(const TorusGrid& grid) {
  const int d = grid.dim();
  std::vector<double> m(static_cast<std::size_t>(d * d), 0.0);
  for (int i = 0; i < d; ++i) m[static_cast<std::size_t>(i * d + i)] = 1.0;
  return constant_tensor(grid, m);
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

namespace detail {

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n)
      : ptr(fftw_alloc_complex(n)), size(n) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* ptr;
  std::size_t size;
};

/// FFTW plans keyed by (d, N, direction). The planner is not reentrant, so
/// creation is serialized; execution uses the new-array interface.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int dim, int n, int sign) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(dim, n, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::size_t total = 1;
    std::array<int, 3> dims{n, n, n};
    for (int a = 0; a < dim; ++a) total *= static_cast<std::size_t>(n);
    FftwBuffer in(total), out(total);
    fftw_plan plan = fftw_plan_dft(dim, dims.data(), in.ptr, out.ptr, sign,
                                   FFTW_ESTIMATE);
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

}  // namespace detail

/// Signed wavenumber of DFT index k; the Nyquist index maps to +N/2.
constexpr int signed_wavenumber(int k, int n) { return k <= n / 2 ? k : k - n; }

/// Normalized Fourier coefficients of one real component:
/// f(x) = sum_k c_k exp(2 pi i k.x), Nyquist terms read as cosines.
class Spectrum {
 public:
  Spectrum(const TorusGrid& grid, std::span<const double> values)
      : grid_(grid), coeff_(grid.size()) {
    detail::FftwBuffer in(grid.size()), out(grid.size());
    for (std::size_t p = 0; p < grid.size(); ++p) {
      in.ptr[p][0] = values[p];
      in.ptr[p][1] = 0.0;
    }
    fftw_execute_dft(detail::PlanCache::instance().get(grid.dim(), grid.points(),
                                                       FFTW_FORWARD),
                     in.ptr, out.ptr);
    const double scale = 1.0 / static_cast<double>(grid.size());
    for (std::size_t p = 0; p < grid.size(); ++p)
      coeff_[p] = cplx(out.ptr[p][0], out.ptr[p][1]) * scale;
  }

  Spectrum(const TorusGrid& grid, std::vector<cplx> coeff)
      : grid_(grid), coeff_(std::move(coeff)) {}

  const TorusGrid& grid() const { return grid_; }
  std::vector<cplx>& coefficients() { return coeff_; }
  const std::vector<cplx>& coefficients() const { return coeff_; }

  /// Signed wavevector of the coefficient at flat index p.
  std::array<int, 3> wavevector(std::size_t p) const {
    auto idx = grid_.multi_index(p);
    for (int a = 0; a < grid_.dim(); ++a) idx[a] = signed_wavenumber(idx[a], grid_.points());
    return idx;
  }

  bool has_nyquist(std::size_t p, int axis) const {
    return grid_.multi_index(p)[axis] == grid_.points() / 2;
  }

  /// Real-space samples of the represented function.
  std::vector<double> to_real() const {
    detail::FftwBuffer in(grid_.size()), out(grid_.size());
    for (std::size_t p = 0; p < grid_.size(); ++p) {
      in.ptr[p][0] = coeff_[p].real();
      in.ptr[p][1] = coeff_[p].imag();
    }
    fftw_execute_dft(detail::PlanCache::instance().get(grid_.dim(), grid_.points(),
                                                       FFTW_BACKWARD),
                     in.ptr, out.ptr);
    std::vector<double> v(grid_.size());
    for (std::size_t p = 0; p < grid_.size(); ++p) v[p] = out.ptr[p][0];
    return v;
  }

  /// Spectrum of the derivative along an axis (Nyquist zeroed).
  Spectrum derivative(int axis) const {
    std::vector<cplx> c(coeff_.size());
    for (std::size_t p = 0; p < coeff_.size(); ++p) {
      if (has_nyquist(p, axis)) continue;
      const int k = wavevector(p)[axis];
      c[p] = coeff_[p] * cplx(0.0, two_pi * k);
    }
    return Spectrum(grid_, std::move(c));
  }

 private:
  TorusGrid grid_;
  std::vector<cplx> coeff_;
};

inline std::vector<double> spectral_diff(const TorusGrid& grid,
                                         std::span<const double> values, int axis) {
  if (axis < 0 || axis >= grid.dim())
    throw PreconditionError(Stage::grid, "axis out of range");
  return Spectrum(grid, values).derivative(axis).to_real();
}

/// Componentwise derivative of the trigonometric interpolant along an axis.
template <FieldKind K>
Field<K> spectral_diff(const Field<K>& f, int axis) {
  if (axis < 0 || axis >= f.grid().dim())
    throw PreconditionError(Stage::grid, "axis out of range");
  Field<K> out(f.grid());
  for (int c = 0; c < f.components(); ++c) {
    auto d = spectral_diff(f.grid(), f.component(c), axis);
    std::copy(d.begin(), d.end(), out.component(c).begin());
  }
  return out;
}

/// All first partial derivatives of a scalar component, sharing one forward
/// transform. Result[a] is the derivative along axis a.
inline std::vector<std::vector<double>> gradient_components(
    const TorusGrid& grid, std::span<const double> values) {
  Spectrum s(grid, values);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(grid.dim()));
  for (int a = 0; a < grid.dim(); ++a) out.push_back(s.derivative(a).to_real());
  return out;
}

inline CovectorField differential(const ScalarField& f) {
  CovectorField df(f.grid());
  auto parts = gradient_components(f.grid(), f.component(0));
  for (int a = 0; a < f.grid().dim(); ++a)
    std::copy(parts[a].begin(), parts[a].end(), df.component(a).begin());
  return df;
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Integral of f against a volume density over the unit torus.
inline double integrate(const ScalarField& f, const ScalarField& density) {
  require_same_grid(f.grid(), density.grid());
  double sum = 0.0;
  for (std::size_t p = 0; p < f.points(); ++p) {
    if (!(density[p] > 0.0))
      throw PreconditionError(Stage::grid, "volume density must be positive");
    sum += f[p] * density[p];
  }
  return sum / static_cast<double>(f.points());
}

inline double integrate(const ScalarField& f) {
  double sum = 0.0;
  for (std::size_t p = 0; p < f.points(); ++p) sum += f[p];
  return sum / static_cast<double>(f.points());
}

inline double mean(const ScalarField& f, const ScalarField& density) {
  ScalarField one(f.grid(), 1.0);
  return integrate(f, density) / integrate(one, density);
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

/// Evaluates trigonometric interpolants of several components at arbitrary
/// points, sharing the per-point exponentials.
class TrigInterpolator {
 public:
  TrigInterpolator(const TorusGrid& grid, std::vector<std::span<const double>> comps)
      : grid_(grid) {
    spectra_.reserve(comps.size());
    for (auto c : comps) spectra_.push_back(Spectrum(grid, c).coefficients());
  }

  template <FieldKind K>
  explicit TrigInterpolator(const Field<K>& f) : grid_(f.grid()) {
    for (int c = 0; c < f.components(); ++c)
      spectra_.push_back(Spectrum(f.grid(), f.component(c)).coefficients());
  }

  std::size_t components() const { return spectra_.size(); }
  const TorusGrid& grid() const { return grid_; }

  /// Writes every component's interpolated value at x into out.
  void eval(const Point& x, std::span<double> out) const {
    const int n = grid_.points();
    const int d = grid_.dim();
    std::array<std::vector<cplx>, 3> w;
    for (int a = 0; a < d; ++a) {
      w[a].resize(static_cast<std::size_t>(n));
      for (int k = 0; k < n; ++k) {
        if (k == n / 2) {
          w[a][k] = std::cos(std::numbers::pi * n * x[a]);
        } else {
          const double ph = two_pi * signed_wavenumber(k, n) * x[a];
          w[a][k] = cplx(std::cos(ph), std::sin(ph));
        }
      }
    }
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t c = 0; c < spectra_.size(); ++c) {
      const auto& co = spectra_[c];
      cplx total = 0.0;
      if (d == 1) {
        for (std::size_t k = 0; k < un; ++k) total += co[k] * w[0][k];
      } else if (d == 2) {
        for (std::size_t i = 0; i < un; ++i) {
          cplx row = 0.0;
          const cplx* r = co.data() + i * un;
          for (std::size_t j = 0; j < un; ++j) row += r[j] * w[1][j];
          total += row * w[0][i];
        }
      } else {
        for (std::size_t i = 0; i < un; ++i) {
          cplx plane = 0.0;
          for (std::size_t j = 0; j < un; ++j) {
            cplx row = 0.0;
            const cplx* r = co.data() + (i * un + j) * un;
            for (std::size_t k = 0; k < un; ++k) row += r[k] * w[2][k];
            plane += row * w[1][j];
          }
          total += plane * w[0][i];
        }
      }
      out[c] = total.real();
    }
  }

  double eval_one(const Point& x) const {
    std::vector<double> v(spectra_.size());
    eval(x, v);
    return v[0];
  }

 private:
  TorusGrid grid_;
  std::vector<std::vector<cplx>> spectra_;
};

namespace detail {

/// Fourier weights for one axis: row k holds exp(2 pi i k' x_p) for the signed
/// wavenumber k' of FFT slot k; the Nyquist row holds cos(pi n x_p).
inline Eigen::MatrixXcd axis_weights(int n, std::span<const Point> pts, int axis) {
  Eigen::MatrixXcd w(n, static_cast<Eigen::Index>(pts.size()));
  for (Eigen::Index p = 0; p < w.cols(); ++p) {
    const double x = pts[static_cast<std::size_t>(p)][static_cast<std::size_t>(axis)];
    const cplx e(std::cos(two_pi * x), std::sin(two_pi * x));
    cplx pw = 1.0;
    w(0, p) = 1.0;
    for (int k = 1; k < n / 2; ++k) {
      pw *= e;
      w(k, p) = pw;
      w(n - k, p) = std::conj(pw);
    }
    w(n / 2, p) = std::cos(std::numbers::pi * n * x);
  }
  return w;
}

}  // namespace detail

/// Trigonometric interpolation of every component at each point; points are
/// wrapped modulo 1. Result is point-major: values[p * components + c].
template <FieldKind K>
std::vector<double> interpolate(const Field<K>& f, std::span<const Point> points) {
  const TorusGrid& g = f.grid();
  const int n = g.points();
  const int d = g.dim();
  const auto nc = static_cast<std::size_t>(f.components());
  std::vector<std::vector<cplx>> spectra;
  for (int c = 0; c < f.components(); ++c) spectra.push_back(Spectrum(g, f.component(c)).coefficients());
  std::vector<double> values(points.size() * nc);
  constexpr std::size_t block = 512;
  const std::size_t nblocks = (points.size() + block - 1) / block;
  using RowMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  parallel::for_each_index(nblocks, [&](std::size_t b) {
    const std::size_t first = b * block;
    const std::size_t count = std::min(block, points.size() - first);
    std::vector<Point> pts(points.begin() + static_cast<std::ptrdiff_t>(first),
                           points.begin() + static_cast<std::ptrdiff_t>(first + count));
    for (auto& x : pts)
      for (int a = 0; a < d; ++a) x[static_cast<std::size_t>(a)] -= std::floor(x[static_cast<std::size_t>(a)]);
    std::array<Eigen::MatrixXcd, 3> w;
    for (int a = 0; a < d; ++a) w[static_cast<std::size_t>(a)] = detail::axis_weights(n, pts, a);
    const auto cols = static_cast<Eigen::Index>(count);
    for (std::size_t c = 0; c < nc; ++c) {
      Eigen::Map<const RowMat> co(spectra[c].data(), static_cast<Eigen::Index>(g.size() / static_cast<std::size_t>(n)), n);
      Eigen::Matrix<cplx, 1, Eigen::Dynamic> total;
      if (d == 1) {
        total = (w[0].array() * co.transpose().replicate(1, cols).array()).colwise().sum();
      } else {
        // contract the fastest axis by a matrix product, then the others pointwise
        const Eigen::MatrixXcd r = co * w[static_cast<std::size_t>(d - 1)];
        if (d == 2) {
          total = (w[0].array() * r.array()).colwise().sum();
        } else {
          Eigen::MatrixXcd plane(n, cols);
          for (int i = 0; i < n; ++i)
            plane.row(i) = (w[1].array() * r.middleRows(static_cast<Eigen::Index>(i) * n, n).array()).colwise().sum();
          total = (w[0].array() * plane.array()).colwise().sum();
        }
      }
      for (std::size_t p = 0; p < count; ++p) values[(first + p) * nc + c] = total(static_cast<Eigen::Index>(p)).real();
    }
  });
  return values;
}

// ---------------------------------------------------------------------------
// s-grids and curves
// ---------------------------------------------------------------------------

/// Uniform samples s_j = s0 + j * ds, j = 0..M-1, of an interval [s0, s1].
class SGrid {
 public:
  SGrid(double s0, double s1, int samples) : s0_(s0), s1_(s1), m_(samples) {
    if (samples < 9) throw PreconditionError(Stage::grid, "an s-grid needs at least 9 samples");
    if (!(s1 > s0)) throw PreconditionError(Stage::grid, "s-interval must have positive length");
  }

  double start() const { return s0_; }
  double end() const { return s1_; }
  int size() const { return m_; }
  double step() const { return (s1_ - s0_) / (m_ - 1); }
  double at(int j) const { return j == m_ - 1 ? s1_ : s0_ + j * step(); }
  bool contains(double s, double slack = 1e-12) const {
    return s >= s0_ - slack && s <= s1_ + slack;
  }
  int nearest(double s) const {
    const long j = std::lround((s - s0_) / step());
    return static_cast<int>(std::clamp<long>(j, 0, m_ - 1));
  }

  friend bool operator==(const SGrid&, const SGrid&) = default;

 private:
  double s0_;
  double s1_;
  int m_;
};

/// s-sampled family of fields with optional analytic derivative samples.
template <class F>
struct FieldCurve {
  SGrid sgrid;
  std::vector<F> samples;
  std::optional<std::vector<F>> derivative;

  int size() const { return static_cast<int>(samples.size()); }
  const F& operator[](int j) const { return samples[static_cast<std::size_t>(j)]; }

  void validate() const {
    if (static_cast<int>(samples.size()) != sgrid.size())
      throw PreconditionError(Stage::grid, "curve sample count does not match its s-grid");
    if (derivative && derivative->size() != samples.size())
      throw PreconditionError(Stage::grid, "derivative sample count mismatch");
    if constexpr (requires(const F& f) { f.grid(); }) {
      for (const auto& f : samples) require_same_grid(f.grid(), samples.front().grid());
    }
  }
};

using ScalarCurve = FieldCurve<ScalarField>;
using MetricCurve = FieldCurve<SymTensorField>;

namespace detail {
inline double axpy_value(double acc, double a, double v) { return acc + a * v; }

template <class F>
F combine(const std::array<double, 5>& w, const std::array<const F*, 5>& f, double scale) {
  if constexpr (std::is_same_v<F, double>) {
    double acc = 0.0;
    for (int i = 0; i < 5; ++i) acc += w[i] * (*f[i]);
    return acc * scale;
  } else {
    F acc(f[0]->grid());
    for (int i = 0; i < 5; ++i)
      if (w[i] != 0.0) acc.axpy(w[i] * scale, *f[i]);
    return acc;
  }
}
}  // namespace detail

/// Fourth-order finite-difference derivative of sampled values at index j.
template <class F>
F fd_derivative_at(const std::vector<F>& v, double h, int j) {
  const int m = static_cast<int>(v.size());
  if (m < 5) throw PreconditionError(Stage::grid, "too few samples for a 4th-order stencil");
  const double scale = 1.0 / (12.0 * h);
  auto at = [&](int i) { return &v[static_cast<std::size_t>(i)]; };
  if (j >= 2 && j <= m - 3) {
    return detail::combine<F>({1.0, -8.0, 0.0, 8.0, -1.0},
                              {at(j - 2), at(j - 1), at(j), at(j + 1), at(j + 2)}, scale);
  }
  if (j == 0) {
    return detail::combine<F>({-25.0, 48.0, -36.0, 16.0, -3.0},
                              {at(0), at(1), at(2), at(3), at(4)}, scale);
  }
  if (j == 1) {
    return detail::combine<F>({-3.0, -10.0, 18.0, -6.0, 1.0},
                              {at(0), at(1), at(2), at(3), at(4)}, scale);
  }
  if (j == m - 1) {
    return detail::combine<F>({25.0, -48.0, 36.0, -16.0, 3.0},
                              {at(m - 1), at(m - 2), at(m - 3), at(m - 4), at(m - 5)}, scale);
  }
  return detail::combine<F>({3.0, 10.0, -18.0, 6.0, -1.0},
                            {at(m - 1), at(m - 2), at(m - 3), at(m - 4), at(m - 5)}, scale);
}

namespace detail {
/// First-derivative weights on the unit-spaced nodes 0..n-1 at node x0
/// (Fornberg recursion).
inline std::vector<double> fd_weights(int n, int x0) {
  std::vector<std::vector<double>> c(static_cast<std::size_t>(n), std::vector<double>(2, 0.0));
  c[0][0] = 1.0;
  double c1 = 1.0;
  for (int i = 1; i < n; ++i) {
    double c2 = 1.0;
    for (int j = 0; j < i; ++j) {
      const double c3 = i - j;
      c2 *= c3;
      const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
      if (j == i - 1) {
        c[ui][1] = c1 * (c[ui - 1][0] - (i - 1 - x0) * c[ui - 1][1]) / c2;
        c[ui][0] = -c1 * (i - 1 - x0) * c[ui - 1][0] / c2;
      }
      c[uj][1] = ((i - x0) * c[uj][1] - c[uj][0]) / c3;
      c[uj][0] = (i - x0) * c[uj][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w;
  for (const auto& row : c) w.push_back(row[1]);
  return w;
}
}  // namespace detail

/// Finite-difference derivative of even order: centered inside, one-sided
/// stencils of the same width near the ends.
template <class F>
F fd_derivative_at(const std::vector<F>& v, double h, int j, int order) {
  if (order == 4) return fd_derivative_at(v, h, j);
  const int m = static_cast<int>(v.size());
  if (order < 2 || order % 2 != 0) throw PreconditionError(Stage::grid, "stencil order must be even and positive");
  const int n = order + 1;
  if (m < n) throw PreconditionError(Stage::grid, "too few samples for the requested stencil");
  const int first = std::clamp(j - order / 2, 0, m - n);
  const auto w = detail::fd_weights(n, j - first);
  if constexpr (std::is_same_v<F, double>) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += w[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(first + i)];
    return acc / h;
  } else {
    F acc(v.front().grid());
    for (int i = 0; i < n; ++i)
      if (w[static_cast<std::size_t>(i)] != 0.0) acc.axpy(w[static_cast<std::size_t>(i)] / h, v[static_cast<std::size_t>(first + i)]);
    return acc;
  }
}

template <class F>
std::vector<F> fd_derivative(const std::vector<F>& v, double h, int order = 4) {
  std::vector<F> out;
  out.reserve(v.size());
  for (int j = 0; j < static_cast<int>(v.size()); ++j) out.push_back(fd_derivative_at(v, h, j, order));
  return out;
}

/// Derivative curve: analytic samples when present, otherwise central
/// differences inside and one-sided stencils at the ends.
template <class F>
FieldCurve<F> s_derivative(const FieldCurve<F>& curve, int order = 4) {
  curve.validate();
  if (curve.derivative) return FieldCurve<F>{curve.sgrid, *curve.derivative, std::nullopt};
  return FieldCurve<F>{curve.sgrid, fd_derivative(curve.samples, curve.sgrid.step(), order),
                       std::nullopt};
}

/// Lagrange weights for evaluating samples at s using `order` consecutive
/// nodes nearest to s. Returns the first node index and the weights.
inline std::pair<int, std::vector<double>> lagrange_weights(const SGrid& g, double s,
                                                            int order) {
  const int m = g.size();
  order = std::min(order, m);
  const double t = (s - g.start()) / g.step();
  int first = static_cast<int>(std::floor(t)) - (order / 2 - 1);
  first = std::clamp(first, 0, m - order);
  std::vector<double> w(static_cast<std::size_t>(order), 1.0);
  for (int i = 0; i < order; ++i) {
    const double ti = first + i;
    for (int k = 0; k < order; ++k) {
      if (k == i) continue;
      const double tk = first + k;
      w[i] *= (t - tk) / (ti - tk);
    }
  }
  return {first, w};
}

/// Lagrange interpolation of a sampled scalar sequence.
inline double lagrange_eval(const SGrid& g, std::span<const double> v, double s, int order) {
  auto [first, w] = lagrange_weights(g, s, order);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * v[static_cast<std::size_t>(first) + i];
  return acc;
}

template <FieldKind K>
Field<K> lagrange_eval(const SGrid& g, const std::vector<Field<K>>& v, double s, int order) {
  auto [first, w] = lagrange_weights(g, s, order);
  Field<K> acc(v.front().grid());
  for (std::size_t i = 0; i < w.size(); ++i) acc.axpy(w[i], v[static_cast<std::size_t>(first) + i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

struct Snapshot {
  int dim = 0;
  int points = 0;
  int components = 0;
  std::vector<double> values;
};

inline constexpr std::uint32_t snapshot_version = 1;

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error(Stage::io, "truncated snapshot header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline void put_f64(std::ostream& os, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error(Stage::io, "truncated snapshot body");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}
}  // namespace detail

/// Writes "PPWF", version, d, N, component count (little-endian u32), then
/// the samples as little-endian float64, component by component, each in
/// row-major grid order.
template <FieldKind K>
void write_snapshot(std::ostream& os, const Field<K>& f) {
  os.write("PPWF", 4);
  detail::put_u32(os, snapshot_version);
  detail::put_u32(os, static_cast<std::uint32_t>(f.grid().dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(f.grid().points()));
  detail::put_u32(os, static_cast<std::uint32_t>(f.components()));
  for (double v : f.raw()) detail::put_f64(os, v);
}

inline Snapshot read_snapshot(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PPWF", 4) != 0)
    throw Error(Stage::io, "not a field snapshot");
  if (detail::get_u32(is) != snapshot_version) throw Error(Stage::io, "unsupported snapshot version");
  Snapshot s;
  s.dim = static_cast<int>(detail::get_u32(is));
  s.points = static_cast<int>(detail::get_u32(is));
  s.components = static_cast<int>(detail::get_u32(is));
  TorusGrid grid(s.dim, s.points);
  s.values.resize(grid.size() * static_cast<std::size_t>(s.components));
  for (auto& v : s.values) v = detail::get_f64(is);
  return s;
}

template <FieldKind K>
Field<K> field_from_snapshot(const Snapshot& s) {
  TorusGrid grid(s.dim, s.points);
  Field<K> f(grid);
  if (s.components != f.components()) throw Error(Stage::io, "snapshot component count mismatch");
  f.raw() = s.values;
  return f;
}

}  // namespace ppw
