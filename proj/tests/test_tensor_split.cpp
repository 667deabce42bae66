#include <gtest/gtest.h>

#include <cmath>

#include "oracles/analytic.hpp"
#include "ppw/tensor_split.hpp"

namespace {

using namespace ppw;
using oracle::max_diff;

ScalarField mode(const TorusGrid& g, int axis) {
  return sample_scalar(g, [axis](const Point& x) { return std::sin(two_pi * x[axis]); });
}

TEST(Decompose, MetricIsPureTrace) {
  TorusGrid g(2, 16);
  MetricField m(identity_tensor(g));
  auto s = decompose(m, m.g());
  EXPECT_NEAR(s.c, 1.0, 1e-12);
  EXPECT_LT(s.f.max_abs(), 1e-12);
  EXPECT_LT(s.X.max_abs(), 1e-12);
  EXPECT_LT(s.sigma.max_abs(), 1e-12);
}

TEST(Decompose, HessianOfSingleMode) {
  TorusGrid g(2, 32);
  MetricField m(identity_tensor(g));
  auto f0 = mode(g, 0);
  auto s = decompose(m, hessian(m, f0));
  EXPECT_NEAR(s.c, 0.0, 1e-12);
  EXPECT_LT(s.u.max_abs(), 1e-10);
  EXPECT_LT(max_diff(s.f.raw(), f0.raw()), 1e-10);
  EXPECT_LT(s.X.max_abs(), 1e-10);
  EXPECT_LT(s.sigma.max_abs(), 1e-9);
}

TEST(Decompose, ConstantTraceFreeIsTT) {
  TorusGrid g(2, 16);
  MetricField m(identity_tensor(g));
  std::vector<double> E{0.7, -0.2, -0.2, -0.7};
  auto h = constant_tensor(g, E);
  auto s = decompose(m, h);
  EXPECT_LT(s.u.max_abs(), 1e-12);
  EXPECT_LT(s.f.max_abs(), 1e-12);
  EXPECT_LT(s.X.max_abs(), 1e-12);
  EXPECT_LT(max_diff(s.sigma.raw(), h.raw()), 1e-12);
}

TEST(Decompose, RejectsCurvedMetric) {
  TorusGrid g(2, 16);
  SymTensorField t(g);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double e = std::exp(0.2 * std::sin(two_pi * g.coordinate(p)[0]) * std::cos(two_pi * g.coordinate(p)[1]));
    t.at(0, 0, p) = e;
    t.at(1, 1, p) = e;
  }
  MetricField m(t);
  EXPECT_THROW(decompose(m, m.g()), PreconditionError);
}

class RandomSplit : public ::testing::TestWithParam<unsigned> {};

TEST_P(RandomSplit, ReconstructsAndTTParts) {
  TorusGrid g(2, 32);
  oracle::ShearMap phi{0.1};
  MetricField m(oracle::pullback_2d(g, phi, [](const Point&) {
    Eigen::Matrix2d G;
    G << 1.1, 0.2, 0.2, 0.9;
    return G;
  }));
  auto h = oracle::random_smooth_tensor(g, GetParam());
  SplitOptions opt;
  opt.cg.tol = 1e-12;
  auto s = decompose(m, h, opt);
  auto r = verify_split(m, h, s);
  EXPECT_LT(r.reconstruction, 1e-9);
  EXPECT_LT(r.trace, 1e-9);
  EXPECT_LT(r.divergence, 1e-9);
  EXPECT_LT(r.divergence_x, 1e-9);
  // Every pair except (trace, hessian) is orthogonal for arbitrary u.
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (!(i == 0 && j == 1)) EXPECT_LT(r.pair(i, j), 1e-9) << split_part_name(i) << "/" << split_part_name(j);
  // <u g, hess f> = -int u lap f, nonzero once u varies.
  EXPECT_NEAR(r.pair(0, 1) * l2_inner(m, h, h), std::abs(l2_inner(m, scalar_times_metric(m, s.u), hessian(m, s.f))), 1e-9);
}

TEST_P(RandomSplit, TTPartIsIdempotent) {
  TorusGrid g(2, 32);
  MetricField m(identity_tensor(g));
  auto s = decompose(m, oracle::random_smooth_tensor(g, GetParam() + 100));
  auto again = decompose(m, s.sigma);
  EXPECT_LT(again.u.max_abs(), 1e-9);
  EXPECT_LT(again.f.max_abs(), 1e-9);
  EXPECT_LT(again.X.max_abs(), 1e-9);
  EXPECT_LT(max_diff(again.sigma.raw(), s.sigma.raw()), 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomSplit, ::testing::Values(1u, 2u, 3u));

TEST(SplitJ, ConstantPlusHessian) {
  TorusGrid g(2, 32);
  MetricField m(identity_tensor(g));
  auto f0 = sample_scalar(g, [](const Point& x) { return std::cos(two_pi * x[1]); });
  auto h = 3.0 * m.g() + hessian(m, f0);
  auto r = split_j_solution(m, h);
  EXPECT_NEAR(r.c, 3.0, 1e-10);
  EXPECT_LT(max_diff(r.f.raw(), f0.raw()), 1e-10);
  EXPECT_LT(r.sigma.max_abs(), 1e-9);
  EXPECT_LT(r.reconstruction, 1e-9);
}

TEST(SplitJ, ConstantTraceFree) {
  TorusGrid g(3, 8);
  MetricField m(identity_tensor(g));
  std::vector<double> E{1, 0.2, 0, 0.2, -0.4, 0.1, 0, 0.1, -0.6};
  auto r = split_j_solution(m, constant_tensor(g, E));
  EXPECT_NEAR(r.c, 0.0, 1e-12);
  EXPECT_LT(r.f.max_abs(), 1e-12);
  EXPECT_LT(max_diff(r.sigma.raw(), constant_tensor(g, E).raw()), 1e-12);
  EXPECT_LT(r.lichnerowicz, 1e-12);
}

TEST(SplitJ, LieOfGradientIsTwiceHessian) {
  TorusGrid g(2, 32);
  MetricField m(identity_tensor(g));
  auto f0 = mode(g, 0);
  auto r = split_j_solution(m, lie_metric(m, gradient(m, f0)));
  EXPECT_NEAR(r.c, 0.0, 1e-12);
  EXPECT_LT(max_diff(r.f.raw(), (2.0 * f0).raw()), 1e-10);
  EXPECT_LT(r.sigma.max_abs(), 1e-9);
  EXPECT_LT(r.lie_residual, 1e-9);
}

TEST(SplitJ, RejectsNonSolution) {
  TorusGrid g(2, 16);
  MetricField m(identity_tensor(g));
  auto h = mode(g, 0) * m.g();
  try {
    split_j_solution(m, h);
    FAIL() << "expected rejection";
  } catch (const PreconditionError& e) {
    EXPECT_EQ(e.stage(), Stage::split);
    EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
  }
}

}  // namespace
