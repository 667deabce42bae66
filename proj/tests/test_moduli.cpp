#include <gtest/gtest.h>

#include <cmath>

#include "ppw/moduli.hpp"

namespace {

using namespace ppw;

ModuliCurve exp_curve(const TorusGrid& g, const SGrid& sg, double rate = 1.0) {
  ModuliCurve mc{MetricCurve{sg, {}, std::vector<SymTensorField>{}}, ScalarCurve{sg, {}, std::nullopt}, {}, {}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j), a = 2 * rate * s;
    mc.g.samples.push_back(constant_tensor(g, std::vector<double>{std::exp(a), 0, 0, std::exp(-a)}));
    mc.g.derivative->push_back(constant_tensor(g, std::vector<double>{2 * rate * std::exp(a), 0, 0, -2 * rate * std::exp(-a)}));
    mc.rho.samples.emplace_back(g, 0.0);
    mc.lambda.push_back(std::cos(rate * s));
    mc.lambda_dot.push_back(-rate * std::sin(rate * s));
  }
  return mc;
}

ModuliCurve wavy_curve(const TorusGrid& g, const SGrid& sg) {
  ModuliCurve mc{MetricCurve{sg, {}, std::nullopt}, ScalarCurve{sg, {}, std::nullopt}, {}, {}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    mc.g.samples.push_back(constant_tensor(g, std::vector<double>{std::exp(s), 0.1 * s, 0.1 * s, std::exp(-s) * (1 + 0.01 * s * s)}));
    mc.rho.samples.push_back(sample_scalar(g, [&](const Point& x) { return 1.0 + 0.5 * std::sin(two_pi * x[0]) * std::cos(s); }));
    mc.lambda.push_back(1.0 + 0.1 * s);
    mc.lambda_dot.push_back(0.1);
  }
  mc.g = normalize(mc.g).base;
  return mc;
}

TEST(Normalize, UnitVolumeCurveHasUnitLambda) {
  TorusGrid g(2, 8);
  SGrid sg(-0.5, 0.5, 11);
  const auto n = normalize(exp_curve(g, sg).g);
  for (std::size_t j = 0; j < n.lambda.size(); ++j) {
    EXPECT_NEAR(n.lambda[j], 1.0, 1e-14);
    EXPECT_NEAR(n.lambda_dot[j], 0.0, 1e-13);
  }
}

TEST(Normalize, ScaledFlatMetric) {
  TorusGrid g(2, 8);
  SGrid sg(0, 1, 9);
  MetricCurve c{sg, std::vector<SymTensorField>(9, 4.0 * identity_tensor(g)), std::nullopt};
  const auto n = normalize(c);
  for (std::size_t j = 0; j < 9; ++j) {
    EXPECT_NEAR(n.lambda[j], 2.0, 1e-14);
    EXPECT_LT((n.base[static_cast<int>(j)] - identity_tensor(g)).max_abs(), 1e-15);
  }
}

TEST(Normalize, InvertsScaling) {
  TorusGrid g(2, 8);
  SGrid sg(-1, 1, 21);
  const auto base = exp_curve(g, sg);
  std::vector<double> l, ld;
  for (int j = 0; j < sg.size(); ++j) {
    l.push_back(2.0 + std::sin(sg.at(j)));
    ld.push_back(std::cos(sg.at(j)));
  }
  const MetricCurve& withrate = base.g;
  const auto n = normalize(scale(withrate, l, ld));
  for (int j = 0; j < sg.size(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    EXPECT_NEAR(n.lambda[uj], l[uj], 1e-12);
    EXPECT_NEAR(n.lambda_dot[uj], ld[uj], 1e-12);
    EXPECT_LT((n.base[j] - base.g[j]).max_abs(), 1e-12);
    EXPECT_LT((n.base.derivative->at(uj) - withrate.derivative->at(uj)).max_abs(), 1e-12);
  }
}

TEST(Equivalence, ReflexiveWithIdentity) {
  TorusGrid g(2, 8);
  SGrid sg(-1, 1, 21);
  const auto a = wavy_curve(g, sg);
  const auto r = equivalent(a, a, 1.0, 0.0);
  EXPECT_EQ(r.worst(), 0.0);
}

TEST(Equivalence, ReparametrizationScalesRho) {
  TorusGrid g(2, 8);
  SGrid sg(-1, 1, 21);
  const auto a = wavy_curve(g, sg);
  const auto b = reparametrize(a, 2.0, 0.5);
  EXPECT_DOUBLE_EQ(b.sgrid().start(), -1.5);
  EXPECT_DOUBLE_EQ(b.sgrid().end(), 2.5);
  for (int j = 0; j < sg.size(); ++j) EXPECT_LT((b.rho[j] - 0.25 * a.rho[j]).max_abs(), 1e-15);
  EXPECT_LT(equivalent(a, b, 2.0, 0.5).worst(), 1e-14);
  // without the alpha^2 factor the check fails
  auto bad = b;
  for (auto& r : bad.rho.samples) r *= 4.0;
  EXPECT_GT(equivalent(a, bad, 2.0, 0.5).rho, 1.0);
  EXPECT_THROW(equivalent(a, b, 2.0, 0.0), PreconditionError);
}

TEST(Equivalence, OrientationReversal) {
  TorusGrid g(2, 8);
  SGrid sg(-1, 1, 21);
  const auto a = wavy_curve(g, sg);
  const auto b = reparametrize(a, -1.0, 0.0);
  EXPECT_LT(equivalent(a, b, -1.0, 0.0).worst(), 1e-14);
}

TEST(Equivalence, TransitiveUnderComposition) {
  TorusGrid g(2, 8);
  SGrid sg(-1, 1, 21);
  const auto a = wavy_curve(g, sg);
  const auto b = reparametrize(a, 2.0, 0.0);
  const auto c = reparametrize(b, 0.5, 1.0);
  const double ab = equivalent(a, b, 2.0, 0.0).worst();
  const double bc = equivalent(b, c, 0.5, 1.0).worst();
  EXPECT_LE(equivalent(a, c, 1.0, 1.0).worst(), ab + bc + 1e-14);
  EXPECT_LT(equivalent(c, a, 1.0, -1.0).worst(), 1e-14);
}

TEST(Equivalence, TranslationPullback) {
  TorusGrid g(2, 16);
  SGrid sg(-1, 1, 21);
  auto a = wavy_curve(g, sg);
  for (int j = 0; j < sg.size(); ++j)
    a.g.samples[static_cast<std::size_t>(j)] = a.g[j] + 0.05 * sample_scalar(g, [](const Point& x) { return std::sin(two_pi * x[1]); }) * a.g[j];
  ModuliCurve b = a;
  std::vector<Diffeo> back;
  const auto tau = Diffeo::translation(g, {0.3, -0.15, 0});
  for (int j = 0; j < sg.size(); ++j) {
    b.g.samples[static_cast<std::size_t>(j)] = pullback(tau, a.g[j]);
    b.rho.samples[static_cast<std::size_t>(j)] = pullback(tau, a.rho[j]);
    back.push_back(Diffeo::translation(g, {-0.3, 0.15, 0}));
  }
  EXPECT_GT(equivalent(a, b, 1.0, 0.0).worst(), 1e-2);
  EXPECT_LT(equivalent(a, b, 1.0, 0.0, back).worst(), 1e-10);
}

TEST(Roundtrip, ConstantVacuumCurveIsExact) {
  TorusGrid g(2, 8);
  SGrid sg(0, 1, 21);
  ModuliCurve mc{MetricCurve{sg, std::vector<SymTensorField>(21, identity_tensor(g)), std::nullopt},
                 ScalarCurve{sg, std::vector<ScalarField>(21, ScalarField(g)), std::nullopt}, std::vector<double>(21, 1.0),
                 std::vector<double>(21, 0.0), std::nullopt};
  const auto r = roundtrip(mc);
  EXPECT_LT(r.report.worst(), 1e-12);
  EXPECT_EQ(r.assembly.metric.size(), 21);
  for (const auto& u : r.assembly.metric.u.samples) EXPECT_LT((u - ScalarField(g, 1.0)).max_abs(), 1e-12);
}

TEST(Roundtrip, ExpCurveWithCosineScale) {
  TorusGrid g(2, 16);
  SGrid sg(-1.2, 1.2, 201);
  const auto mc = exp_curve(g, sg);
  const auto r = roundtrip(mc);
  EXPECT_LT(r.lambda_ode, 1e-8);
  EXPECT_EQ(r.assembly.metric.size(), 201);
  EXPECT_LT(r.report.lambda, 1e-8);
  EXPECT_LT(r.report.metric, 1e-6);
  EXPECT_LT(r.report.rho, 1e-6);
}

TEST(Roundtrip, NonvacuumCurveAndGaugedRepresentative) {
  TorusGrid g(2, 32);
  SGrid sg(-0.6, 0.6, 61);
  ModuliCurve mc = exp_curve(g, sg, 0.5);
  for (int j = 0; j < sg.size(); ++j)
    mc.rho.samples[static_cast<std::size_t>(j)] =
        sample_scalar(g, [](const Point& x) { return 1.0 + 0.5 * std::sin(two_pi * x[0]); });
  // lambda'' = -(P + Sigma/4)/2 lambda with P = 1, Sigma = 2
  const double w = std::sqrt(0.75);
  for (int j = 0; j < sg.size(); ++j) {
    mc.lambda[static_cast<std::size_t>(j)] = std::cos(w * sg.at(j));
    mc.lambda_dot[static_cast<std::size_t>(j)] = -w * std::sin(w * sg.at(j));
  }
  VectorCurve gen{sg, {}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    const ScalarField f = sample_scalar(g, [&](const Point& x) {
      return 0.02 * (1 + s) * std::sin(two_pi * x[0]) * std::cos(two_pi * x[1]) / two_pi;
    });
    gen.samples.push_back(gradient(MetricField(mc.g[j]), f));
  }
  const auto fam = integrate_flow(gen, sg.start());
  const ModuliCurve other = pullback(fam, mc);
  const auto chk = compare_representatives(mc, other);
  EXPECT_LT(chk.first.report.worst(), 1e-6);
  EXPECT_LT(chk.second.report.worst(), 1e-6);
  EXPECT_LT(chk.invariants.worst(), 1e-6);
  EXPECT_GT(chk.invariants.worst(), 0.0);
}

TEST(Roundtrip, HomothetyScalesVolumesOnly) {
  TorusGrid g(2, 16);
  SGrid sg(-1.0, 1.0, 81);
  const auto mc = exp_curve(g, sg, 0.5);
  auto big = mc;
  const double c = 3.0;
  for (auto& l : big.lambda) l *= c;
  for (auto& l : big.lambda_dot) l *= c;
  const auto r1 = roundtrip(mc), r2 = roundtrip(big);
  for (int j = 0; j < r1.assembly.metric.size(); ++j) {
    const double v1 = MetricField(r1.assembly.metric.g[j]).volume(), v2 = MetricField(r2.assembly.metric.g[j]).volume();
    EXPECT_NEAR(v2 / v1, c * c, 1e-10);
    EXPECT_LT((r1.extracted.rho[j] - r2.extracted.rho[j]).max_abs(), 1e-8);
  }
}

TEST(ModuliCurve, RejectsNonUnitVolumeAndNonpositiveLambda) {
  TorusGrid g(2, 8);
  SGrid sg(-0.5, 0.5, 11);
  auto mc = exp_curve(g, sg);
  mc.g.samples[3] *= 1.01;
  EXPECT_THROW(mc.validate(), PreconditionError);
  auto neg = exp_curve(g, sg);
  neg.lambda[2] = -0.1;
  EXPECT_THROW(neg.validate(), PreconditionError);
}

}  // namespace
