#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles/analytic.hpp"
#include "ppw/scale_ode.hpp"

namespace {

using namespace ppw;
using std::numbers::pi;

ScaleCoefficient constant_q(double q, double s0 = -3, double s1 = 3, int m = 601) {
  SGrid sg(s0, s1, m);
  return ScaleCoefficient(sg, std::vector<double>(static_cast<std::size_t>(sg.size()), q));
}

MetricCurve exp_curve(const TorusGrid& g, const SGrid& sg) {
  MetricCurve c{sg, {}, std::vector<SymTensorField>{}};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    std::vector<double> m{std::exp(2 * s), 0, 0, std::exp(-2 * s)};
    std::vector<double> md{2 * std::exp(2 * s), 0, 0, -2 * std::exp(-2 * s)};
    c.samples.push_back(constant_tensor(g, m));
    c.derivative->push_back(constant_tensor(g, md));
  }
  return c;
}

TEST(ScaleData, ConstantCurveIsZero) {
  TorusGrid g(2, 8);
  SGrid sg(0, 1, 9);
  std::vector<double> m{1.2, 0.1, 0.1, 1};
  MetricCurve c{sg, std::vector<SymTensorField>(9, constant_tensor(g, m)), std::nullopt};
  ScalarCurve rho{sg, std::vector<ScalarField>(9, ScalarField(g)), std::nullopt};
  auto d = compute_scale_data(c, rho);
  for (int j = 0; j < 9; ++j) {
    EXPECT_NEAR(d.P[static_cast<std::size_t>(j)], 0.0, 1e-15);
    EXPECT_NEAR(d.Sigma[static_cast<std::size_t>(j)], 0.0, 1e-15);
  }
}

TEST(ScaleData, ExponentialTorusCurve) {
  TorusGrid g(2, 16);
  SGrid sg(-1, 1, 11);
  auto rho_field = sample_scalar(g, [](const Point& x) { return 2.0 + std::sin(two_pi * x[0]); });
  ScalarCurve rho{sg, std::vector<ScalarField>(11, rho_field), std::nullopt};
  auto d = compute_scale_data(exp_curve(g, sg), rho);
  for (std::size_t j = 0; j < 11; ++j) {
    EXPECT_NEAR(d.P[j], 2.0, 1e-13);
    EXPECT_NEAR(d.Sigma[j], 8.0, 1e-10);
    EXPECT_NEAR(d.coefficient()[j], 2.0, 1e-10);
  }
}

TEST(SolveLambda, ZeroCoefficientIsLinear) {
  auto q = constant_q(0.0);
  auto one = solve_lambda(q, 0.0, 1.0, 0.0);
  for (double v : one.lambda) EXPECT_NEAR(v, 1.0, 1e-15);
  EXPECT_TRUE(one.zeros.empty());
  auto lin = solve_lambda(q, 0.0, 0.0, 1.0);
  for (int j = 0; j < q.sgrid().size(); ++j) EXPECT_NEAR(lin.lambda[static_cast<std::size_t>(j)], q.sgrid().at(j), 1e-13);
  ASSERT_EQ(lin.zeros.size(), 1u);
  EXPECT_NEAR(lin.zeros[0].s, 0.0, 1e-13);
}

TEST(SolveLambda, HarmonicOscillator) {
  auto q = constant_q(1.0, -3, 3, 601);
  auto sol = solve_lambda(q, 0.0, 1.0, 0.0);
  for (int j = 0; j < q.sgrid().size(); ++j) EXPECT_NEAR(sol.lambda[static_cast<std::size_t>(j)], std::cos(q.sgrid().at(j)), 1e-8);
  ASSERT_EQ(sol.zeros.size(), 2u);
  EXPECT_NEAR(sol.zeros[0].s, -pi / 2, 1e-8);
  EXPECT_NEAR(sol.zeros[1].s, pi / 2, 1e-8);
  EXPECT_NEAR(sol.zeros[1].slope, -1.0, 1e-8);
  EXPECT_EQ(sol.components().size(), 3u);
  EXPECT_EQ(sol.component_containing(0.0), 1);
  EXPECT_THROW(solve_lambda(q, 0.0, 0.0, 0.0), PreconditionError);
}

TEST(SolveLambda, OffSampleInitialPoint) {
  auto q = constant_q(1.0, -3, 3, 601);
  auto sol = solve_lambda(q, 0.1234, std::cos(0.1234), -std::sin(0.1234));
  for (int j = 0; j < q.sgrid().size(); ++j) EXPECT_NEAR(sol.lambda[static_cast<std::size_t>(j)], std::cos(q.sgrid().at(j)), 1e-8);
}

TEST(SolveLambda, LinearityAndWronskian) {
  SGrid sg(-2, 2, 401);
  std::vector<double> qs;
  for (int j = 0; j < sg.size(); ++j) qs.push_back(1.0 + 0.5 * std::sin(3 * sg.at(j)));
  ScaleCoefficient q(sg, qs);
  auto basis = solution_basis(q, 0.3);
  auto mix = solve_lambda(q, 0.3, 2.0, -0.5);
  for (std::size_t j = 0; j < mix.lambda.size(); ++j)
    EXPECT_NEAR(mix.lambda[j], 2.0 * basis.first.lambda[j] - 0.5 * basis.second.lambda[j], 1e-10);
  const auto w = basis.wronskian();
  for (double v : w) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(ZeroSpacing, CosineIsTight) {
  auto q = constant_q(1.0, -5, 5, 1001);
  auto sol = solve_lambda(q, 0.0, 1.0, 0.0);
  auto r = check_zero_spacing(sol, 1.0, 1.0);
  EXPECT_TRUE(r.pass) << (r.violations.empty() ? "" : r.violations.front());
  EXPECT_NEAR(r.min_spacing, pi, 1e-6);
  EXPECT_FALSE(check_zero_spacing(sol, 0.5, 0.5).pass);
  auto too_strict = check_zero_spacing(sol, 1.0, 1.5);
  EXPECT_FALSE(too_strict.pass);
}

TEST(ZeroSpacing, NonpositiveCoefficientHasAtMostOneZero) {
  auto sol = solve_lambda(constant_q(0.0), 0.0, 0.0, 1.0);
  EXPECT_TRUE(check_zero_spacing(sol, 0.0, 0.0).pass);
  auto osc = solve_lambda(constant_q(1.0, -5, 5, 1001), 0.0, 1.0, 0.0);
  EXPECT_FALSE(check_zero_spacing(osc, 0.0, 0.0).pass);
}

TEST(ZeroSpacing, PeriodicObstructionProducesZero) {
  const double eps = 0.1;
  SGrid sg(0, 2 * pi, 201);
  std::vector<double> qs;
  for (int j = 0; j < sg.size(); ++j) qs.push_back(eps * eps * std::cos(sg.at(j)) * std::cos(sg.at(j)));
  ScaleCoefficient q(sg, qs, 2 * pi);
  auto z = first_zero_periodic(q, 0.0, 1.0, 0.0, 1000.0);
  ASSERT_TRUE(z.has_value());
  EXPECT_GT(z->s, 2 * pi);
  EXPECT_LT(z->s, 40.0);
  ScaleCoefficient flat(sg, std::vector<double>(qs.size(), 0.0), 2 * pi);
  EXPECT_FALSE(first_zero_periodic(flat, 0.0, 1.0, 0.0, 1000.0).has_value());
}

TEST(Invariance, IdentityAndTranslation) {
  TorusGrid g(2, 16);
  SGrid sg(-0.5, 0.5, 11);
  auto curve = exp_curve(g, sg);
  auto rho_field = sample_scalar(g, [](const Point& x) { return 1.0 + 0.3 * std::cos(two_pi * x[1]); });
  ScalarCurve rho{sg, std::vector<ScalarField>(11, rho_field), std::nullopt};
  VectorCurve gen{sg, std::vector<VectorField>(11, VectorField(g)), std::nullopt};
  auto id = integrate_flow(gen, sg.start());
  auto r = check_invariance(curve, rho, id, [](double) { return std::pair{1.0, 0.0}; });
  EXPECT_LT(r.P, 1e-15);
  EXPECT_LT(r.Sigma, 1e-15);
  VectorField a(g);
  for (std::size_t p = 0; p < g.size(); ++p) a(1, p) = 0.37;
  auto tr = integrate_flow(VectorCurve{sg, std::vector<VectorField>(11, a), std::nullopt}, sg.start());
  auto rt = check_invariance(curve, rho, tr, [](double) { return std::pair{1.0, 0.0}; });
  EXPECT_LT(rt.P, 1e-12);
  EXPECT_LT(rt.Sigma, 1e-12);
}

}  // namespace
