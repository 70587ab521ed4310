#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "segpart/eigensolve.hpp"
#include "segpart/monotonicity.hpp"

using namespace segpart;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> radii_from(double a, double b, double step) {
  std::vector<double> r;
  for (int m = 0; a + m * step <= b + 1e-12; ++m) r.push_back(a + m * step);
  return r;
}

const EigenResult& disk_ground_state() {
  static const EigenResult e = first_dirichlet_eig(Mask::whole(build_domain(Shape::disk(1.0), 128)));
  return e;
}

}  // namespace

TEST(RadialProfile, EndpointValues) {
  for (int N : {3, 4, 5}) {
    const auto p = build_radial_profile(N, 0.8, 512);
    EXPECT_EQ(p.psi.front(), 1.0);
    EXPECT_NEAR(p.gamma_phi.back(), 0.0, 1e-8);
    EXPECT_NEAR(p.psi.back(), 0.0, 1e-8);
    EXPECT_EQ(p.phi.front(), 1.0);
    for (std::size_t k = 1; k < p.s.size(); ++k) {
      EXPECT_LT(p.phi[k], p.phi[k - 1]);
      if (k + 1 < p.s.size()) EXPECT_GT(p.gamma_phi[k], 0.0);
      if (p.s[k] <= p.R_bar) EXPECT_GT(p.psi[k], 0.0);
    }
  }
}

TEST(RadialProfile, ClosedFormForThreeDimensionalSinc) {
  // N = 3, 2 R_bar = 1: phi(s) = sin(pi s)/(pi s), so
  // Gamma(s) = pi (cot(pi s) + 1) and psi(s) = (sin cos + sin^2)(pi s) / (pi s)
  const auto p = build_radial_profile(3, 0.5, 1024);
  for (std::size_t k = 1; k < p.s.size(); k += 37) {
    const double s = p.s[k], a = kPi * s;
    EXPECT_NEAR(p.gamma_phi[k], kPi * (1.0 / std::tan(a) + 1.0), 1e-7 * (1.0 + p.gamma_phi[k])) << s;
    EXPECT_NEAR(p.psi[k], (std::sin(a) * std::cos(a) + std::sin(a) * std::sin(a)) / a, 1e-7) << s;
  }
}

TEST(RadialProfile, FittedConstantStableUnderRefinement) {
  for (int N : {3, 4}) {
    const double c1 = fit_psi_constant(build_radial_profile(N, 1.0, 512));
    const double c2 = fit_psi_constant(build_radial_profile(N, 1.0, 1024));
    EXPECT_TRUE(std::isfinite(c1));
    EXPECT_LE(std::abs(c2 - c1), 0.1 * c1);
  }
}

TEST(RadialProfile, HarmonicSurrogateClosedForm) {
  // with phi = 1: Gamma(s) = s^{2-N} - L^{2-N}, psi(s) = 1 - (s/L)^{N-2}
  const int N = 4;
  const double L = 1.5;
  const auto gamma = [&](double s) { return std::pow(s, 2.0 - N) - std::pow(L, 2.0 - N); };
  EXPECT_EQ(gamma(L), 0.0);
  EXPECT_NEAR(std::pow(1e-6, N - 2) * gamma(1e-6), 1.0, 1e-9);
  const auto p = build_radial_profile(N, 1.0, 256);
  EXPECT_EQ(p.psi.front(), 1.0);
  EXPECT_EQ(p.gamma_phi.back(), 0.0);
}

TEST(RadialProfile, Errors) {
  EXPECT_THROW(build_radial_profile(3, 1.0, 100), Error);
  EXPECT_THROW(build_radial_profile(3, 0.0), Error);
  EXPECT_THROW(fit_psi_constant(build_radial_profile(2, 1.0)), Error);
}

TEST(Gamma, Values) {
  EXPECT_EQ(gamma_fun(3, 0.0), 0.0);
  EXPECT_EQ(gamma_fun(7, 0.0), 0.0);
  EXPECT_NEAR(gamma_fun(3, 2.0), 1.0, 1e-15);
  EXPECT_NEAR(gamma_derivative(5, 4.0), 0.2, 1e-6);
  for (int N : {3, 4, 6}) {
    EXPECT_NEAR(gamma_fun(N, N - 1.0), 1.0, 1e-14);
    EXPECT_NEAR(gamma_derivative(N, N - 1.0), 1.0 / N, 1e-6);
  }
  EXPECT_THROW(gamma_fun(3, -1.0), Error);
}

TEST(Gamma, ConcaveIncreasing) {
  for (int N : {2, 3, 4, 5}) {
    std::vector<double> g;
    for (int q = 0; q <= 1000; ++q) g.push_back(gamma_fun(N, 10.0 * q / 1000));
    for (std::size_t q = 1; q < g.size(); ++q) EXPECT_GT(g[q], g[q - 1]);
    for (std::size_t q = 1; q + 1 < g.size(); ++q) EXPECT_LE(g[q + 1] - 2 * g[q] + g[q - 1], 1e-14);
  }
}

TEST(MeanValue, ConstantField) {
  const auto d = build_domain(Shape::disk(1.0), 64);
  const auto v = ScalarField::sample(d, [](Point) { return 1.0; });
  const auto rep = mean_value_check(v, 0.0, {0.0, 0.0}, radii_from(0.1, 0.8, 0.1));
  for (double x : rep.values) EXPECT_NEAR(x, kPi, 0.01 * kPi);
  EXPECT_LE(rep.max_violation, 0.01);
}

TEST(MeanValue, DiskGroundStateMatchesBesselAverages) {
  const auto& e = disk_ground_state();
  const double j = bessel_first_zero(0.0);
  const double c = 1.0 / (std::sqrt(kPi) * std::cyl_bessel_j(1.0, j));
  const auto radii = radii_from(0.05, 0.9, 0.05);
  const auto rep = mean_value_check(e.field, e.lambda, {0.0, 0.0}, radii);
  for (std::size_t k = 0; k < radii.size(); ++k) {
    const double r = radii[k];
    const double oracle = c * 2.0 * kPi * r * std::cyl_bessel_j(1.0, j * r) / (j * r * r);
    EXPECT_NEAR(rep.values[k], oracle, 0.01 * oracle) << r;
  }
  EXPECT_LE(rep.max_violation, 0.01);
  EXPECT_LE(rep.constants.at("weighted_max_violation"), 0.01);
}

TEST(MeanValue, GradientSquaredComparison) {
  const auto& e = disk_ground_state();
  const ScalarField v(e.field.domain(), gradient_norm_sq(e.field));
  const double lim = 0.95 * 2.0 * ball_radius_for_eigenvalue(2, 2.0 * e.lambda);
  const auto rep = mean_value_check(v, 2.0 * e.lambda, {0.0, 0.0}, radii_from(0.05, std::min(lim, 0.9), 0.05));
  EXPECT_LE(rep.max_violation, 0.01);
}

TEST(MeanValue, Errors) {
  const auto d = build_domain(Shape::disk(1.0), 32);
  const auto v = ScalarField::sample(d, [](Point) { return 1.0; });
  EXPECT_THROW(mean_value_check(v, 0.0, {1.5, 0.0}, {0.1}), Error);
  EXPECT_THROW(mean_value_check(v, 0.0, {0.0, 0.0}, {0.5, 1.2}), Error);
  EXPECT_THROW(mean_value_check(v, 0.0, {0.0, 0.0}, {0.5, 0.4}), Error);
}

TEST(Acf, ZeroFieldGivesZero) {
  const auto d = build_domain(Shape::disk_minus_ball(2.0, 1.0), 64);
  const auto p = build_radial_profile(2, 1.0);
  const auto rep = acf_psi_functional(ScalarField(d), p, {0.0, 0.0}, radii_from(0.1, 0.5, 0.1), 0.0,
                                      ExteriorBall{{-1.0, 0.0}, 1.0});
  for (double v : rep.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(rep.max_violation, 0.0);
}

TEST(Acf, ContactPointOfDiskMinusBall) {
  const auto d = build_domain(Shape::disk_minus_ball(2.0, 1.0), 128);
  const auto e = first_dirichlet_eig(Mask::whole(d));
  const auto p = build_radial_profile(2, ball_radius_for_eigenvalue(2, e.lambda));
  const double h = d->h();
  const auto radii = radii_from(4.0 * h, 0.5, h);
  const auto rep = scan_psi_constant(e.field, p, {0.0, 0.0}, radii, 0.02, {0, 1, 2, 4, 8}, ExteriorBall{{-1.0, 0.0}, 1.0});
  EXPECT_LE(rep.max_violation, 0.02);
  EXPECT_LT(rep.constants.at("sandwich_lower"), 1e3);
  EXPECT_LT(rep.constants.at("sandwich_upper"), 1e3);
  // sandwich columns are consistent with the reported constants
  const auto* lower = rep.column("dirichlet_over_psi");
  ASSERT_NE(lower, nullptr);
  for (double x : *lower) EXPECT_LE(x, rep.constants.at("sandwich_lower") + 1e-12);
}

TEST(Acf, Errors) {
  const auto d = build_domain(Shape::disk(2.0), 64);
  const auto p = build_radial_profile(2, 1.0);
  const auto u = ScalarField::sample(d, [](Point) { return 1.0; });
  try {
    acf_psi_functional(u, p, {0.0, 0.0}, {0.1, 0.2}, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "constraint violated");
  }
  EXPECT_THROW(acf_psi_functional(u, p, {1.9, 0.0}, {0.1, 0.2}, 0.0), Error);
  EXPECT_THROW(acf_psi_functional(u, build_radial_profile(3, 1.0), {0.0, 0.0}, {0.1}, 0.0), Error);
}

TEST(Cjk, ZeroSecondPhase) {
  const auto d = build_domain(Shape::square(2.0), 64);
  const auto u1 = ScalarField::sample(d, [](Point p) { return p.x; });
  const auto rep = cjk_product(u1, ScalarField(d), {1.0, 1.0}, radii_from(0.1, 0.5, 0.1));
  for (double v : rep.values) EXPECT_EQ(v, 0.0);
}

TEST(Cjk, LinearRampsAreBounded) {
  // |grad u_i| = 1 on a half ball each: every phase average tends to pi/2
  const auto d = build_domain(Shape::square(2.0), 128);
  const auto u1 = ScalarField::sample(d, [](Point p) { return std::max(p.x - 1.0, 0.0); });
  const auto u2 = ScalarField::sample(d, [](Point p) { return std::max(1.0 - p.x, 0.0); });
  const double h = d->h();
  const auto rep = cjk_product(u1, u2, {1.0, 1.0}, radii_from(4.0 * h, 0.5, h));
  // the interface column carries half-size centred differences: O(h/r) deficit
  const double oracle = kPi * kPi / 4.0;
  for (std::size_t k = 0; k < rep.radii.size(); ++k) {
    EXPECT_GT(rep.values[k], 0.85 * oracle) << rep.radii[k];
    EXPECT_LT(rep.values[k], 1.02 * oracle) << rep.radii[k];
  }
  EXPECT_NEAR(rep.values.back(), oracle, 0.03 * oracle);
  EXPECT_LE(rep.constants.at("max_over_min"), 1.2);
}

TEST(Cjk, SwapInvariantAndOverlapError) {
  const auto d = build_domain(Shape::square(2.0), 64);
  const auto u1 = ScalarField::sample(d, [](Point p) { return std::max(p.x - 1.0, 0.0) * p.y; });
  const auto u2 = ScalarField::sample(d, [](Point p) { return std::pow(std::max(0.9 - p.x, 0.0), 2); });
  const auto radii = radii_from(0.1, 0.6, 0.05);
  EXPECT_EQ(cjk_product(u1, u2, {1.0, 1.0}, radii).values, cjk_product(u2, u1, {1.0, 1.0}, radii).values);
  const auto u3 = ScalarField::sample(d, [](Point p) { return p.x; });
  try {
    cjk_product(u1, u3, {1.0, 1.0}, radii);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "overlapping supports");
  }
}

TEST(Reports, CsvAndJson) {
  MonotonicityReport rep;
  rep.radii = {0.1, 0.2};
  rep.values = {1.0, 0.5};
  rep.max_violation = max_relative_decrease(rep.values);
  rep.columns.emplace_back("extra", std::vector<double>{3.0, 4.0});
  rep.constants["C"] = 2.0;
  EXPECT_EQ(report_csv(rep), "r,value,extra\n0.1,1,3\n0.2,0.5,4\n");
  const auto j = report_json(rep);
  EXPECT_DOUBLE_EQ(j["max_violation"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["fitted_constants"]["C"].get<double>(), 2.0);
}

TEST(Reports, Spearman) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
}
