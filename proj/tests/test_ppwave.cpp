#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ppw/ppwave.hpp"

namespace {

using namespace ppw;
using std::numbers::pi;

PPWaveMetric exp_wave(const TorusGrid& g, const SGrid& sg) {
  PPWaveMetric pp{sg, ScalarCurve{sg, {}, std::nullopt}, MetricCurve{sg, {}, std::vector<SymTensorField>{}}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    std::vector<double> m{std::exp(2 * s), 0, 0, std::exp(-2 * s)};
    std::vector<double> md{2 * std::exp(2 * s), 0, 0, -2 * std::exp(-2 * s)};
    pp.u.samples.emplace_back(g, 1.0);
    pp.g.samples.push_back(constant_tensor(g, m));
    pp.g.derivative->push_back(constant_tensor(g, md));
  }
  return pp;
}

// lapse and leaves both varying in s and x
PPWaveMetric wobbly_wave(const TorusGrid& g, const SGrid& sg) {
  PPWaveMetric pp{sg, ScalarCurve{sg, {}, std::nullopt}, MetricCurve{sg, {}, std::nullopt}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    pp.u.samples.push_back(sample_scalar(g, [&](const Point& x) {
      return 1.0 + 0.2 * std::sin(two_pi * x[0]) * std::cos(s) + 0.1 * std::cos(two_pi * x[1]);
    }));
    SymTensorField h(g);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const Point x = g.coordinate(p);
      const double c = 1.0 + 0.1 * std::sin(two_pi * (x[0] + x[1])) * std::sin(s);
      h.at(0, 0, p) = c * (1.0 + 0.3 * s);
      h.at(0, 1, p) = 0.1 * std::cos(s);
      h.at(1, 1, p) = c;
    }
    pp.g.samples.push_back(std::move(h));
  }
  return pp;
}

TEST(PPWave, ProductMetricHasZeroBlocks) {
  TorusGrid g(2, 16);
  SGrid sg(0, 1, 21);
  auto pp = product_metric(sg, identity_tensor(g));
  auto cf = ricci_closed_form(pp);
  EXPECT_LT(cf.max_spatial(), 1e-13);
  EXPECT_LT(cf.max_mixed(), 1e-13);
  for (const auto& r : cf.rho.samples) EXPECT_LT(r.max_abs(), 1e-13);
  auto fd = ricci_fd_oracle(pp, {1e-3, 8, 10, 1e-2, std::nullopt});
  auto cmp = compare_ricci(cf, fd);
  EXPECT_LT(cmp.worst(), 1e-8);
}

TEST(PPWave, ValidateRejectsBadLapse) {
  TorusGrid g(1, 8);
  SGrid sg(0, 1, 9);
  auto pp = product_metric(sg, identity_tensor(g));
  pp.u.samples[3][2] = -0.5;
  EXPECT_THROW(pp.validate(), PreconditionError);
}

TEST(PPWave, ExponentialLeavesGiveMinusTwo) {
  TorusGrid g(2, 8);
  SGrid sg(-0.5, 0.5, 41);
  auto pp = exp_wave(g, sg);
  auto cf = ricci_closed_form(pp);
  for (const auto& r : cf.rho.samples)
    for (double v : r.raw()) EXPECT_NEAR(v, -2.0, 1e-6);
  auto fd = ricci_fd_oracle(pp, {1e-3, 4, 10, 1e-2, std::nullopt});
  ASSERT_FALSE(fd.empty());
  for (const auto& o : fd) EXPECT_NEAR(o.ricci(1, 1), -2.0, 1e-5);
  EXPECT_LT(compare_ricci(cf, fd).worst(), 1e-5);
}

TEST(PPWave, ClosedFormMatchesOracleOnGenericMetric) {
  TorusGrid g(2, 32);
  SGrid sg(0, 1, 101);
  auto pp = wobbly_wave(g, sg);
  auto cf = ricci_closed_form(pp);
  auto fd = ricci_fd_oracle(pp, {1e-3, 4, 25, 1e-2, std::nullopt});
  auto cmp = compare_ricci(cf, fd);
  EXPECT_GT(cmp.max_ss, 1e-2);
  EXPECT_GT(cmp.max_mixed, 1e-3);
  EXPECT_LT(cmp.ss, 1e-6);
  EXPECT_LT(cmp.mixed, 1e-6);
  EXPECT_LT(cmp.spatial, 1e-6);
  EXPECT_LT(cmp.null_blocks, 1e-6);
}

TEST(PPWave, CurvatureVanishesForFlatLeaves) {
  TorusGrid g(2, 16);
  SGrid sg(-0.5, 0.5, 41);
  auto pp = exp_wave(g, sg);
  for (int j = 0; j < sg.size(); ++j)
    pp.u.samples[static_cast<std::size_t>(j)] = sample_scalar(g, [&](const Point& x) {
      return 1.0 + 0.2 * std::sin(two_pi * x[0]) * std::cos(sg.at(j)) + 0.1 * std::cos(two_pi * x[1]);
    });
  auto fd = ricci_fd_oracle(pp, {1e-3, 4, 10, 1e-2, std::nullopt});
  auto cv = curvature_vanishing_check(fd, pp);
  EXPECT_LT(cv.full, 1e-5);
  EXPECT_LT(cv.traced, 1e-5);
}

TEST(PPWave, CurvedLeavesBreakVanishing) {
  TorusGrid g(2, 32);
  SGrid sg(0, 1, 101);
  auto pp = wobbly_wave(g, sg);
  auto fd = ricci_fd_oracle(pp, {1e-3, 8, 25, 1e-2, std::nullopt});
  auto cv = curvature_vanishing_check(fd, pp);
  EXPECT_GT(cv.full, 1e-2);
  EXPECT_GT(cv.traced, 1e-3);
}

TEST(PPWave, TracedIdentityVanishesForStaticFlatLeaves) {
  TorusGrid g(2, 16);
  SGrid sg(0, 1, 41);
  auto pp = product_metric(sg, identity_tensor(g));
  for (int j = 0; j < sg.size(); ++j)
    pp.u.samples[static_cast<std::size_t>(j)] =
        sample_scalar(g, [&](const Point& x) { return 1.0 + 0.2 * std::sin(two_pi * x[0]) * (1 + sg.at(j)); });
  auto fd = ricci_fd_oracle(pp, {1e-3, 4, 10, 1e-2, std::nullopt});
  auto cv = curvature_vanishing_check(fd, pp);
  EXPECT_LT(cv.full, 1e-6);
  EXPECT_LT(cv.traced, 1e-6);
}

TEST(PPWave, SecondFundamentalFormClosedForms) {
  TorusGrid g(2, 32);
  SGrid sg(0, 1, 101);
  auto pp = wobbly_wave(g, sg);
  auto ids = extract_ids(pp);
  EXPECT_LT(ids.asymmetry, 1e-9);
  const auto rate = s_derivative(pp.g);
  std::vector<ScalarField> us(pp.u.samples);
  const auto udot = fd_derivative(us, sg.step());
  double e_ij = 0, e_ss = 0, e_si = 0;
  for (int j = 0; j < sg.size(); ++j) {
    const auto& u = pp.u[j];
    const auto du = differential(u);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const double u2 = u[p] * u[p];
      e_ss = std::max(e_ss, std::abs(ids.k_ss[j][p] + udot[static_cast<std::size_t>(j)][p] / u2));
      for (int i = 0; i < 2; ++i) {
        e_si = std::max(e_si, std::abs(ids.k_si[j](i, p) + du(i, p) / u2));
        for (int l = 0; l < 2; ++l) e_ij = std::max(e_ij, std::abs(ids.k_ij[j].at(i, l, p) + 0.5 * u[p] * rate[j].at(i, l, p)));
      }
    }
  }
  EXPECT_LT(e_ij, 1e-10);
  EXPECT_LT(e_ss, 1e-8);
  EXPECT_LT(e_si, 1e-10);
  EXPECT_LT(upar_residuals(ids).worst(), 1e-8);
}

TEST(PPWave, StaticLeavesHaveKMinusHalfGdot) {
  TorusGrid g(2, 8);
  SGrid sg(-0.5, 0.5, 41);
  auto ids = extract_ids(exp_wave(g, sg));
  for (int j = 0; j < sg.size(); ++j) {
    const double s = sg.at(j);
    EXPECT_NEAR(ids.k_ij[j].at(0, 0, 0), -std::exp(2 * s), 1e-12);
    EXPECT_NEAR(ids.k_ij[j].at(1, 1, 0), std::exp(-2 * s), 1e-12);
    EXPECT_NEAR(ids.k_ss[j].max_abs(), 0.0, 1e-12);
  }
}

TEST(PPWave, KillingDevelopmentRoundTrip) {
  TorusGrid g(2, 32);
  SGrid sg(0, 1, 101);
  auto pp = wobbly_wave(g, sg);
  auto back = killing_development(extract_ids(pp));
  for (int j = 0; j < sg.size(); ++j) {
    EXPECT_EQ(back.u[j].raw(), pp.u[j].raw());
    EXPECT_EQ(back.g[j].raw(), pp.g[j].raw());
  }
}

TEST(PPWave, KillingDevelopmentRejectsBrokenK) {
  TorusGrid g(2, 8);
  SGrid sg(-0.5, 0.5, 41);
  auto ids = extract_ids(exp_wave(g, sg));
  ids.k_ss.samples[5][0] += 0.1;
  EXPECT_THROW(killing_development(ids), PreconditionError);
}

TEST(PPWave, EnergyCondition) {
  TorusGrid g(1, 8);
  SGrid sg(0, 1, 9);
  ScalarCurve rho{sg, std::vector<ScalarField>(9, ScalarField(g, 0.5)), std::nullopt};
  EXPECT_TRUE(energy_condition(rho).holds);
  rho.samples[4][3] = -1e-3;
  auto v = energy_condition(rho);
  EXPECT_FALSE(v.holds);
  EXPECT_DOUBLE_EQ(v.min_rho, -1e-3);
  EXPECT_DOUBLE_EQ(v.s_at_min, sg.at(4));
}

MetricCurve static_flat(const TorusGrid& g, const SGrid& sg) {
  return MetricCurve{sg, std::vector<SymTensorField>(static_cast<std::size_t>(sg.size()), identity_tensor(g)),
                     std::vector<SymTensorField>(static_cast<std::size_t>(sg.size()), SymTensorField(g))};
}

TEST(Assemble, CosineScaleGivesUnitLapse) {
  TorusGrid g(2, 16);
  SGrid sg(-1.5, 1.5, 301);
  const auto base = static_flat(g, sg);
  ScalarCurve rho{sg, std::vector<ScalarField>(301, ScalarField(g, 2.0)), std::nullopt};
  const auto data = compute_scale_data(base, rho);
  const auto lam = solve_lambda(data, 0.0, 1.0, 0.0);
  for (int j = 0; j < sg.size(); ++j) EXPECT_NEAR(lam.lambda[static_cast<std::size_t>(j)], std::cos(sg.at(j)), 1e-9);
  const auto as = assemble(base, rho, data, lam, 0);
  for (const auto& u : as.metric.u.samples)
    for (double v : u.raw()) EXPECT_NEAR(v, 1.0, 1e-9);
  const auto cf = ricci_closed_form(as.metric);
  for (int j = 0; j < as.metric.size(); ++j)
    for (double v : cf.rho[j].raw()) EXPECT_NEAR(v, 2.0, 1e-8);
}

TEST(Assemble, ReproducesVaryingProfile) {
  TorusGrid g(2, 16);
  SGrid sg(-1.0, 1.0, 201);
  const auto base = static_flat(g, sg);
  const auto field = sample_scalar(g, [](const Point& x) { return 1.0 + 0.5 * std::sin(two_pi * x[0]); });
  ScalarCurve rho{sg, std::vector<ScalarField>(201, field), std::nullopt};
  const auto data = compute_scale_data(base, rho);
  const auto lam = solve_lambda(data, 0.0, 1.0, 0.0);
  ASSERT_EQ(lam.components().size(), 1u);
  const auto as = assemble(base, rho, data, lam, 0);
  EXPECT_LT(as.solvability, 1e-12);
  for (const auto& u : as.metric.u.samples)
    for (double v : u.raw()) EXPECT_LE(v, 1.0 + 1e-12);
  const auto cf = ricci_closed_form(as.metric);
  double err = 0;
  for (int j = 0; j < as.metric.size(); ++j) err = std::max(err, (cf.rho[j] - as.rho[j]).max_abs());
  EXPECT_LT(err, 1e-6);
  EXPECT_LT(cf.max_mixed(), 1e-10);
  EXPECT_LT(cf.max_spatial(), 1e-10);

  auto fd = ricci_fd_oracle(as.metric, {1e-3, 4, 40, 1e-2, std::nullopt});
  EXPECT_LT(null_ricci_residual(fd, &as.rho), 1e-5);
}

TEST(Assemble, LapseShiftIsOneConstantWithMinimumOne) {
  TorusGrid g(2, 16);
  SGrid sg(-1.0, 1.0, 101);
  const auto base = static_flat(g, sg);
  const auto field = sample_scalar(g, [](const Point& x) { return 1.0 + 0.5 * std::sin(two_pi * x[0]); });
  ScalarCurve rho{sg, std::vector<ScalarField>(101, field), std::nullopt};
  const auto data = compute_scale_data(base, rho);
  const auto as = assemble(base, rho, data, solve_lambda(data, 0.0, 1.0, 0.0), 0);
  for (double c : as.shift) EXPECT_EQ(c, as.shift.front());
  double wmin = 1e300;
  for (const auto& u : as.metric.u.samples)
    for (double v : u.raw()) wmin = std::min(wmin, 1.0 / (v * v));
  EXPECT_NEAR(wmin, 1.0, 1e-12);
}

TEST(Assemble, RejectsInconsistentScaleData) {
  TorusGrid g(1, 16);
  SGrid sg(-1.0, 1.0, 41);
  const auto base = static_flat(g, sg);
  ScalarCurve rho{sg, std::vector<ScalarField>(41, ScalarField(g, 1.0)), std::nullopt};
  auto data = compute_scale_data(base, rho);
  const auto lam = solve_lambda(data, 0.0, 1.0, 0.0);
  data.P.assign(data.P.size(), 2.0);
  EXPECT_THROW(assemble(base, rho, data, lam, 0), PreconditionError);
}

TEST(Assemble, ShortComponentIsRejected) {
  TorusGrid g(1, 16);
  SGrid sg(0.0, 4.0, 41);
  const auto base = static_flat(g, sg);
  ScalarCurve rho{sg, std::vector<ScalarField>(41, ScalarField(g, 4.0)), std::nullopt};
  const auto data = compute_scale_data(base, rho);
  const auto lam = solve_lambda(data, 0.0, 1.0, 0.0);  // lambda = cos(2 s)
  ASSERT_GE(lam.components().size(), 2u);
  EXPECT_THROW(assemble(base, rho, data, lam, 0), PreconditionError);
  EXPECT_NO_THROW(assemble(base, rho, data, lam, 1));
  EXPECT_NEAR(lam.components()[1].second - lam.components()[1].first, pi / 2, 1e-4);
}

}  // namespace

namespace {

using namespace ppw;

MetricCurve exp_base(const TorusGrid& g, const SGrid& sg) {
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

TEST(Assemble, VacuumWaveFromExponentialCurve) {
  TorusGrid g(2, 16);
  SGrid sg(-1.5, 1.5, 201);
  const auto base = exp_base(g, sg);
  ScalarCurve rho{sg, std::vector<ScalarField>(201, ScalarField(g)), std::nullopt};
  const auto data = compute_scale_data(base, rho);
  for (double q : data.coefficient()) EXPECT_NEAR(q, 1.0, 1e-10);
  const auto lam = solve_lambda(data, 0.0, 1.0, 0.0);
  const auto as = assemble(base, rho, data, lam, lam.component_containing(0.0));
  for (const auto& u : as.metric.u.samples)
    for (double v : u.raw()) EXPECT_NEAR(v, 1.0, 1e-9);
  const auto cf = ricci_closed_form(as.metric);
  for (int j = 0; j < as.metric.size(); ++j) EXPECT_LT(cf.rho[j].max_abs(), 1e-8);
  auto fd = ricci_fd_oracle(as.metric, {1e-3, 8, 20, 1e-2, std::pair{-1.2, 1.2}});
  EXPECT_LT(null_ricci_residual(fd, nullptr), 1e-5);
}

TEST(Assemble, ExponentialCurveWithVaryingProfile) {
  TorusGrid g(2, 32);
  SGrid sg(-1.5, 1.5, 201);
  const auto base = exp_base(g, sg);
  const auto field = sample_scalar(g, [](const Point& x) { return 1.0 + 0.5 * std::sin(two_pi * x[0]); });
  ScalarCurve rho{sg, std::vector<ScalarField>(201, field), std::nullopt};
  const auto data = compute_scale_data(base, rho);
  const auto lam = solve_lambda(data, 0.0, 1.0, 0.0);
  const auto as = assemble(base, rho, data, lam, lam.component_containing(0.0));
  const auto cf = ricci_closed_form(as.metric);
  double err = 0;
  for (int j = 0; j < as.metric.size(); ++j) err = std::max(err, (cf.rho[j] - as.rho[j]).max_abs());
  EXPECT_LT(err, 1e-6);  // worst at the edge sample, lambda ~ 1e-2
  auto fd = ricci_fd_oracle(as.metric, {1e-3, 8, 20, 1e-2, std::pair{-1.2, 1.2}});
  EXPECT_LT(null_ricci_residual(fd, &as.rho), 1e-4);
  auto cv = curvature_vanishing_check(fd, as.metric);
  EXPECT_LT(cv.full, 1e-5);
  EXPECT_LT(cv.traced, 1e-5);
}

}  // namespace
