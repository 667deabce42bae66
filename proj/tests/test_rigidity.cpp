#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ppw/rigidity.hpp"

namespace {

using namespace ppw;
using std::numbers::pi;

PeriodicCurve wobble(const TorusGrid& g, double eps, int m = 129) {
  SGrid sg(0, 2 * pi, m);
  PeriodicCurve pc{MetricCurve{sg, {}, std::vector<SymTensorField>{}}, ScalarCurve{sg, {}, std::nullopt}, 2 * pi,
                   TorusMap::identity(g.dim())};
  for (int j = 0; j < m; ++j) {
    const double s = sg.at(j), a = 2 * eps * std::sin(s), ad = 2 * eps * std::cos(s);
    std::vector<double> mm{std::exp(a), 0, 0, std::exp(-a)};
    std::vector<double> md{ad * std::exp(a), 0, 0, -ad * std::exp(-a)};
    pc.curve.samples.push_back(constant_tensor(g, mm));
    pc.curve.derivative->push_back(constant_tensor(g, md));
    pc.rho.samples.emplace_back(g, 0.0);
  }
  return pc;
}

TEST(Rigidity, ConstantVacuumCurveIsRigid) {
  TorusGrid g(2, 8);
  auto rep = rigidity_check(wobble(g, 0.0, 33));
  EXPECT_EQ(rep.verdict, RigidityVerdict::rigid);
  ASSERT_TRUE(rep.product.has_value());
  for (const auto& u : rep.product->u.samples)
    for (double v : u.raw()) EXPECT_EQ(v, 1.0);
  EXPECT_LT(rep.max_sigma, 1e-14);
  EXPECT_FALSE(rep.certificate.has_value());
}

TEST(Rigidity, WobblingCurveIsObstructed) {
  TorusGrid g(2, 8);
  const double eps = 0.1;
  auto rep = rigidity_check(wobble(g, eps));
  EXPECT_EQ(rep.verdict, RigidityVerdict::obstructed);
  for (int j = 0; j < rep.data.sgrid.size(); ++j)
    EXPECT_NEAR(rep.data.Sigma[static_cast<std::size_t>(j)], 8 * eps * eps * std::pow(std::cos(rep.data.sgrid.at(j)), 2), 1e-12);
  ASSERT_TRUE(rep.certificate.has_value());
  EXPECT_GT(rep.certificate->zero, rep.certificate->s_star);
  EXPECT_TRUE(std::isfinite(rep.certificate->zero));
  EXPECT_GT(std::abs(rep.certificate->slope), 1e-6);
  // q <= max q = 2 eps^2, so the first zero is no earlier than the constant-q comparison
  EXPECT_GE(rep.certificate->zero - rep.certificate->s_star, pi / 2 / std::sqrt(2 * eps * eps) - 1e-6);
}

TEST(Rigidity, NegativeEnergyIsNotApplicable) {
  TorusGrid g(2, 8);
  auto pc = wobble(g, 0.0, 33);
  pc.rho.samples[7][3] = -1.0;
  EXPECT_FALSE(energy_condition(pc.rho).holds);
  EXPECT_THROW(rigidity_check(pc), PreconditionError);
}

TEST(Rigidity, NonPeriodicCurveIsRejected) {
  TorusGrid g(2, 8);
  auto pc = wobble(g, 0.1);
  pc.curve.samples.back().at(0, 0, 0) += 1e-3;
  EXPECT_THROW(rigidity_check(pc), PreconditionError);
  auto wrong_period = wobble(g, 0.1);
  wrong_period.period = pi;
  EXPECT_THROW(rigidity_check(wrong_period), PreconditionError);
}

TEST(Rigidity, MappingTorusWithRotation) {
  TorusGrid g(2, 16);
  SGrid sg(0, 1, 17);
  Eigen::MatrixXi A(2, 2);
  A << 0, -1, 1, 0;
  const TorusMap rot{A, {0.25, 0.0, 0.0}};
  // g_1 = rot^* g_0 for a metric that is not rot-invariant
  std::vector<double> m{1.0, 0.2, 0.2, 1.0};
  const SymTensorField base = constant_tensor(g, m);
  const SymTensorField end = pullback(rot, base);
  EXPECT_GT((end - base).max_abs(), 0.1);
  PeriodicCurve pc{MetricCurve{sg, {}, std::nullopt}, ScalarCurve{sg, {}, std::nullopt}, 1.0, rot};
  for (int j = 0; j < sg.size(); ++j) {
    const double t = sg.at(j);
    pc.curve.samples.push_back((1 - t) * base + t * end);
    pc.rho.samples.emplace_back(g, 0.0);
  }
  auto rep = rigidity_check(pc);
  EXPECT_LT(rep.periodicity, 1e-12);
  // a straight line between distinct flat metrics moves the TT part
  EXPECT_EQ(rep.verdict, RigidityVerdict::obstructed);
}

TEST(Rigidity, TorusMapMustBeUnimodular) {
  Eigen::MatrixXi A(2, 2);
  A << 2, 0, 0, 1;
  EXPECT_THROW((TorusMap{A, {}}).validate(2), PreconditionError);
}

}  // namespace
