#include <gtest/gtest.h>

#include <cmath>

#include "oracles/analytic.hpp"
#include "ppw/elliptic.hpp"

namespace {

using namespace ppw;
using oracle::max_diff;

SymTensorField bumpy_metric(const TorusGrid& g) {
  return oracle::sample_tensor_2d(g, [](const Point& x) {
    Eigen::Matrix2d m;
    const double off = 0.15 * std::sin(two_pi * (x[0] + x[1]));
    m << 1.2 + 0.2 * std::sin(two_pi * x[0]), off, off, 0.9 + 0.1 * std::cos(two_pi * x[1]);
    return m;
  });
}

TEST(Poisson, FlatSineMode) {
  TorusGrid g(2, 32);
  MetricField flat(identity_tensor(g));
  auto w = sample_scalar(g, [](const Point& x) { return std::sin(two_pi * x[0]) * std::cos(two_pi * x[1]); });
  auto rhs = (2 * two_pi * two_pi) * w;
  CgReport rep;
  auto sol = solve_poisson(flat, rhs, {}, &rep);
  EXPECT_LT(max_diff(sol.raw(), w.raw()), 1e-9);
  EXPECT_LT(rep.relative_residual, 1e-10);
}

TEST(Poisson, CurvedMetricResidualAndMean) {
  TorusGrid g(2, 32);
  MetricField m(bumpy_metric(g));
  auto rhs = sample_scalar(g, [](const Point& x) { return 1.0 + std::cos(two_pi * x[0]) + 0.3 * std::sin(two_pi * x[1]); });
  CgReport rep;
  auto w = solve_poisson(m, rhs, {}, &rep);
  EXPECT_NEAR(mean(w, m.sqrt_det()), 0.0, 1e-12);
  auto lap = laplacian(m, w);
  const double rm = mean(rhs, m.sqrt_det());
  double err = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) err = std::max(err, std::abs(lap[p] - (rhs[p] - rm)));
  EXPECT_LT(err, 1e-8);
}

TEST(Killing, FlatTorusFieldsAreParallel) {
  TorusGrid g(2, 16);
  std::vector<double> c{2, 0.3, 0.3, 1};
  MetricField m(constant_tensor(g, c));
  auto ks = killing_fields(m);
  ASSERT_EQ(ks.size(), 2u);
  for (const auto& k : ks) EXPECT_LT(lie_metric(m, k).max_abs(), 1e-12);
}

TEST(Killing, PulledBackFlatMetric) {
  TorusGrid g(2, 32);
  oracle::ShearMap phi{0.12};
  MetricField m(oracle::pullback_2d(g, phi, [](const Point&) { return Eigen::Matrix2d::Identity(); }));
  for (const auto& k : killing_fields(m)) {
    EXPECT_GT(k.max_abs(), 0.5);
    EXPECT_LT(lie_metric(m, k).max_abs(), 1e-8);
  }
}

TEST(GaugeGenerator, MakesPerturbationDivergenceFree) {
  TorusGrid g(2, 32);
  MetricField m(bumpy_metric(g));
  auto h = oracle::sample_tensor_2d(g, [](const Point& x) {
    Eigen::Matrix2d t;
    t << std::cos(two_pi * x[1]), 0.4 * std::sin(two_pi * (x[0] - x[1])), 0.4 * std::sin(two_pi * (x[0] - x[1])),
        0.5 * std::sin(two_pi * x[0]);
    return t;
  });
  auto ks = killing_fields(m);
  CgReport rep;
  auto X = solve_gauge_generator(m, h, ks, {}, &rep);
  auto fixed = h + lie_metric(m, X);
  EXPECT_LT(divergence(m, fixed).max_abs(), 1e-7);
  for (const auto& k : ks) EXPECT_NEAR(l2_inner(m, k, X), 0.0, 1e-10);
}

TEST(ConformalKilling, TraceFreeRemainderIsDivergenceFree) {
  TorusGrid g(2, 32);
  MetricField m(bumpy_metric(g));
  auto h = oracle::sample_tensor_2d(g, [](const Point& x) {
    Eigen::Matrix2d t;
    t << std::sin(two_pi * x[0]), 0.2 * std::cos(two_pi * x[1]), 0.2 * std::cos(two_pi * x[1]), 0.0;
    return t;
  });
  auto ks = killing_fields(m);
  auto Y = solve_conformal_killing(m, h, ks);
  auto r = h - lie_metric(m, Y);
  auto tr = trace(m, r);
  r.axpy(-0.5, tr * m.g());
  EXPECT_LT(divergence(m, r).max_abs(), 1e-7);
}

TEST(ConformalKilling, RecoversExactLieDerivative) {
  TorusGrid g(3, 16);
  MetricField flat(identity_tensor(g));
  VectorField y0(g);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Point x = g.coordinate(p);
    y0(0, p) = std::sin(two_pi * x[1]);
    y0(1, p) = std::cos(two_pi * (x[0] + x[2]));
    y0(2, p) = 0.5 * std::sin(two_pi * x[0]);
  }
  auto Y = solve_conformal_killing(flat, lie_metric(flat, y0), killing_fields(flat));
  EXPECT_LT(max_diff(Y.raw(), y0.raw()), 1e-8);
}

}  // namespace
