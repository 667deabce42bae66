#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ppw/torus_fields.hpp"

namespace {

using namespace ppw;

ScalarField sine_x(const TorusGrid& g, int axis = 0, int k = 1) {
  return sample_scalar(g, [&](const Point& x) { return std::sin(two_pi * k * x[axis]); });
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(TorusGrid, RejectsBadShapes) {
  EXPECT_THROW(TorusGrid(0, 16), PreconditionError);
  EXPECT_THROW(TorusGrid(4, 16), PreconditionError);
  EXPECT_THROW(TorusGrid(2, 12), PreconditionError);
  EXPECT_THROW(TorusGrid(2, 4), PreconditionError);
  TorusGrid g(3, 8);
  EXPECT_EQ(g.size(), 512u);
}

TEST(TorusGrid, IndexRoundTrip) {
  TorusGrid g(3, 8);
  for (std::size_t p = 0; p < g.size(); ++p) EXPECT_EQ(g.flat_index(g.multi_index(p)), p);
  EXPECT_EQ(g.flat_index({-1, 8, 9}), g.flat_index({7, 0, 1}));
}

TEST(SpectralDiff, ConstantHasZeroDerivative) {
  TorusGrid g(2, 16);
  ScalarField one(g, 1.0);
  EXPECT_LT(spectral_diff(one, 0).max_abs(), 1e-14);
}

TEST(SpectralDiff, SineDerivativeMatchesClosedForm) {
  TorusGrid g(2, 32);
  auto d = spectral_diff(sine_x(g), 0);
  auto expect = sample_scalar(g, [](const Point& x) { return two_pi * std::cos(two_pi * x[0]); });
  EXPECT_LT(max_diff(d.raw(), expect.raw()), 1e-12);
  EXPECT_LT(spectral_diff(sine_x(g), 1).max_abs(), 1e-14);
}

TEST(SpectralDiff, AxisOutOfRange) {
  TorusGrid g(2, 8);
  EXPECT_THROW(spectral_diff(ScalarField(g), 2), PreconditionError);
}

TEST(SpectralDiff, MixedPartialsCommute) {
  TorusGrid g(2, 32);
  auto f = sample_scalar(g, [](const Point& x) {
    return std::exp(0.3 * std::sin(two_pi * x[0])) * std::cos(two_pi * (x[0] + 2 * x[1]));
  });
  auto a = spectral_diff(spectral_diff(f, 0), 1);
  auto b = spectral_diff(spectral_diff(f, 1), 0);
  EXPECT_LT(max_diff(a.raw(), b.raw()), 1e-12);
}

TEST(SpectralDiff, DerivativesIntegrateToZero) {
  TorusGrid g(3, 8);
  auto f = sample_scalar(g, [](const Point& x) { return std::exp(std::sin(two_pi * x[2]) + 0.2 * x[0]); });
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(integrate(spectral_diff(f, a)), 0.0, 1e-12);
}

TEST(SpectralDiff, NyquistModeOfOddDerivativeIsZeroed) {
  TorusGrid g(1, 8);
  auto f = sample_scalar(g, [](const Point& x) { return std::cos(std::numbers::pi * 8 * x[0]); });
  EXPECT_LT(spectral_diff(f, 0).max_abs(), 1e-13);
}

TEST(Integrate, UnitAndModes) {
  TorusGrid g(2, 16);
  ScalarField one(g, 1.0);
  EXPECT_NEAR(integrate(one, one), 1.0, 1e-15);
  EXPECT_NEAR(integrate(sine_x(g), one), 0.0, 1e-14);
  ScalarField two(g, 2.0);  // sqrt det diag(4, 1)
  EXPECT_NEAR(integrate(one, two), 2.0, 1e-14);
  EXPECT_NEAR(mean(sine_x(g), two), 0.0, 1e-14);
}

TEST(Integrate, RejectsNonpositiveDensity) {
  TorusGrid g(1, 8);
  EXPECT_THROW(integrate(ScalarField(g, 1.0), ScalarField(g, 0.0)), PreconditionError);
}

TEST(Interpolate, ConstantsModesAndGridPoints) {
  TorusGrid g(2, 16);
  std::vector<Point> pts{{0.25, 0.1, 0}, {0.71, 0.33, 0}, {1.25, -0.9, 0}};
  auto c = interpolate(ScalarField(g, 3.5), pts);
  for (double v : c) EXPECT_NEAR(v, 3.5, 1e-13);
  auto s = interpolate(sine_x(g), pts);
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[2], 1.0, 1e-12);
  EXPECT_NEAR(s[1], std::sin(two_pi * 0.71), 1e-12);

  auto f = sample_scalar(g, [](const Point& x) { return std::exp(std::sin(two_pi * x[0]) * std::cos(two_pi * x[1])); });
  std::vector<Point> nodes;
  for (std::size_t p = 0; p < g.size(); ++p) nodes.push_back(g.coordinate(p));
  auto back = interpolate(f, nodes);
  EXPECT_LT(max_diff(back, f.raw()), 1e-12);
}

TEST(Interpolate, NyquistReadsAsCosine) {
  TorusGrid g(1, 8);
  auto f = sample_scalar(g, [](const Point& x) { return std::cos(std::numbers::pi * 8 * x[0]); });
  std::vector<Point> pts{{0.03, 0, 0}};
  EXPECT_NEAR(interpolate(f, pts)[0], std::cos(std::numbers::pi * 8 * 0.03), 1e-13);
}

TEST(SDerivative, ConstantLinearAndExponential) {
  TorusGrid g(1, 8);
  SGrid sg(-1.0, 1.0, 201);
  ScalarCurve constant{sg, std::vector<ScalarField>(201, ScalarField(g, 2.0)), std::nullopt};
  for (const auto& f : s_derivative(constant).samples) EXPECT_LT(f.max_abs(), 1e-10);

  ScalarCurve linear{sg, {}, std::nullopt};
  for (int j = 0; j < sg.size(); ++j) linear.samples.push_back(ScalarField(g, 3.0 * sg.at(j) - 1.0));
  for (const auto& f : s_derivative(linear).samples)
    for (double v : f.raw()) EXPECT_NEAR(v, 3.0, 1e-10);

  SGrid fine(-1.0, 1.0, 201);  // ds = 0.01
  std::vector<double> e2;
  for (int j = 0; j < fine.size(); ++j) e2.push_back(std::exp(2 * fine.at(j)));
  auto de = fd_derivative(e2, fine.step());
  for (int j = 0; j < fine.size(); ++j)
    EXPECT_LT(std::abs(de[j] - 2 * e2[j]) / (2 * e2[j]), 1e-6) << j;
}

TEST(SDerivative, PrefersAnalyticSamples) {
  TorusGrid g(1, 8);
  SGrid sg(0.0, 1.0, 9);
  ScalarCurve c{sg, std::vector<ScalarField>(9, ScalarField(g, 1.0)),
                std::vector<ScalarField>(9, ScalarField(g, 7.0))};
  EXPECT_EQ(s_derivative(c)[4][0], 7.0);
}

TEST(SGrid, NeedsNineSamples) { EXPECT_THROW(SGrid(0, 1, 8), PreconditionError); }

TEST(Snapshot, RoundTripAndHeader) {
  TorusGrid g(2, 8);
  SymTensorField t(g);
  for (std::size_t i = 0; i < t.raw().size(); ++i) t.raw()[i] = std::sin(0.1 * i);
  std::stringstream ss;
  write_snapshot(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.substr(0, 4), "PPWF");
  EXPECT_EQ(bytes.size(), 4 + 16 + 8 * t.raw().size());
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 8);  // N, little endian
  auto snap = read_snapshot(ss);
  auto back = field_from_snapshot<FieldKind::sym_tensor>(snap);
  EXPECT_EQ(back.raw(), t.raw());
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_snapshot(bad), Error);
}

TEST(Lagrange, ReproducesPolynomials) {
  SGrid sg(0.0, 1.0, 11);
  std::vector<double> v;
  for (int j = 0; j < 11; ++j) v.push_back(std::pow(sg.at(j), 5) - sg.at(j));
  for (double s : {0.0, 0.033, 0.5, 0.97, 1.0})
    EXPECT_NEAR(lagrange_eval(sg, v, s, 8), std::pow(s, 5) - s, 1e-13);
}

}  // namespace
