#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "segpart/eigensolve.hpp"

using namespace segpart;

namespace {

constexpr double kPi = std::numbers::pi;

// first zero of the standard-library Bessel function, by bisection
double std_bessel_zero(double nu) {
  double lo = 0.5, hi = 0.5;
  while (std::cyl_bessel_j(nu, hi) > 0.0) {
    lo = hi;
    hi += 0.01;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (std::cyl_bessel_j(nu, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// lowest eigenvalue of the 5-point Laplacian on the unit square: sum of two
// 1-D tridiagonal eigenvalues
double square_oracle(int n) {
  const double h = 1.0 / n;
  return 2.0 * 4.0 / (h * h) * std::pow(std::sin(kPi * h / 2.0), 2);
}

double l2(const ScalarField& f) { return std::sqrt(l2_norm_sq(f)); }

}  // namespace

TEST(FirstEig, SquareMatchesTensorProductOracle) {
  for (int n : {16, 32, 64}) {
    const auto e = first_dirichlet_eig(Mask::whole(build_domain(Shape::square(1.0), n)));
    EXPECT_NEAR(e.lambda, square_oracle(n), 1e-8 * square_oracle(n)) << n;
  }
}

TEST(FirstEig, SquareContinuumWithinHalfPercent) {
  const auto e = first_dirichlet_eig(Mask::whole(build_domain(Shape::square(1.0), 128)));
  EXPECT_NEAR(e.lambda, 2.0 * kPi * kPi, 0.005 * 2.0 * kPi * kPi);
}

TEST(FirstEig, DiskRichardsonWithinHalfPercent) {
  const double j01 = std_bessel_zero(0.0);
  const auto coarse = first_dirichlet_eig(Mask::whole(build_domain(Shape::disk(1.0), 64)));
  const auto fine = first_dirichlet_eig(Mask::whole(build_domain(Shape::disk(1.0), 128)));
  EXPECT_NEAR(richardson(coarse.lambda, fine.lambda, 1.0), j01 * j01, 0.005 * j01 * j01);
}

TEST(FirstEig, SingleNode) {
  const auto d = build_domain(Shape::square(1.0), 10);
  Mask m(d);
  m.set(d->index(5, 5), true);
  const auto e = first_dirichlet_eig(m);
  EXPECT_DOUBLE_EQ(e.lambda, 4.0 / (d->h() * d->h()));
  EXPECT_NEAR(l2(e.field), 1.0, 1e-12);
}

TEST(FirstEig, EmptyRegion) {
  const auto d = build_domain(Shape::square(1.0), 10);
  try {
    first_dirichlet_eig(Mask(d));
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty region");
  }
}

TEST(FirstEig, NonConvergenceCarriesResidual) {
  EigenOptions opts;
  opts.max_iterations = 1;
  opts.tol = 1e-14;
  try {
    first_dirichlet_eig(Mask::whole(build_domain(Shape::l_shape(1.0), 32)), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
  }
}

TEST(FirstEig, PostconditionsOnLShape) {
  EigenOptions opts;
  opts.tol = 1e-9;
  const auto e = first_dirichlet_eig(Mask::whole(build_domain(Shape::l_shape(1.0), 48)), opts);
  EXPECT_NEAR(l2(e.field), 1.0, 1e-10);
  for (double v : e.field.values()) EXPECT_GE(v, 0.0);
  EXPECT_LE(e.residual, opts.tol);
  EXPECT_LE(std::abs(rayleigh_quotient(e.field) - e.lambda), 10.0 * e.residual + 1e-12 * e.lambda);
}

TEST(FirstEig, DisconnectedRegionPicksLowestComponent) {
  const auto d = build_domain(Shape::rectangle(2.0, 1.0), 32);
  Mask big(d), small(d), both(d);
  for (std::size_t k = 0; k < d->size(); ++k) {
    if (!d->contains(k)) continue;
    const Point p = d->point(k);
    if (p.x < 0.9) big.set(k, true);
    if (p.x > 1.3) small.set(k, true);
  }
  both |= big;
  both |= small;
  const auto eb = first_dirichlet_eig(big), eu = first_dirichlet_eig(both);
  EXPECT_NEAR(eu.lambda, eb.lambda, 1e-8 * eb.lambda);
  for (std::size_t k = 0; k < d->size(); ++k)
    if (small[k]) EXPECT_LT(eu.field[k], 1e-6);
}

TEST(FirstEig, DomainMonotonicityOnNestedMasks) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto d = build_domain(Shape::square(1.0), 20);
  for (int t = 0; t < 30; ++t) {
    Mask outer = Mask::whole(d);
    for (int hole = 0; hole < 3; ++hole) {
      const Point c{u(rng), u(rng)};
      for (std::size_t k = 0; k < d->size(); ++k)
        if (outer[k] && distance(d->point(k), c) < 0.12) outer.set(k, false);
    }
    Mask inner = outer;
    const Point c{u(rng), u(rng)};
    for (std::size_t k = 0; k < d->size(); ++k)
      if (inner[k] && distance(d->point(k), c) < 0.2) inner.set(k, false);
    if (inner.empty()) continue;
    EXPECT_GE(first_dirichlet_eig(inner).lambda, first_dirichlet_eig(outer).lambda * (1.0 - 1e-9));
  }
}

TEST(FirstEig, RefinementIsSecondOrderOnSquare) {
  const double exact = 2.0 * kPi * kPi;
  double e16 = first_dirichlet_eig(Mask::whole(build_domain(Shape::square(1.0), 16))).lambda;
  double e32 = first_dirichlet_eig(Mask::whole(build_domain(Shape::square(1.0), 32))).lambda;
  double e64 = first_dirichlet_eig(Mask::whole(build_domain(Shape::square(1.0), 64))).lambda;
  const double extrap = richardson(e16, e32, 2.0);
  EXPECT_NEAR(extrap, e64, std::abs(e32 - e16));
  EXPECT_NEAR((exact - e32) / (exact - e64), 4.0, 0.05);
}

TEST(Bessel, FirstZeros) {
  EXPECT_NEAR(bessel_first_zero(0.5), kPi, 1e-10);
  EXPECT_NEAR(bessel_first_zero(0.0), 2.404825558, 1e-9);
  EXPECT_NEAR(bessel_first_zero(1.0), 3.831705970, 1e-9);
  for (double nu : {0.0, 0.25, 1.0, 1.5, 2.0, 3.5, 5.0}) EXPECT_NEAR(bessel_first_zero(nu), std_bessel_zero(nu), 1e-10);
  EXPECT_THROW(bessel_first_zero(-0.1), Error);
  EXPECT_THROW(bessel_first_zero(5.5), Error);
}

TEST(Bessel, SeriesMatchesStandardLibrary) {
  for (double nu : {0.0, 0.5, 2.0, 4.5})
    for (double x : {0.1, 1.0, 5.0, 10.0}) EXPECT_NEAR(bessel_j_series(nu, x), std::cyl_bessel_j(nu, x), 1e-12);
}

TEST(RadialGroundState, ThreeDimensionalBall) {
  const auto g = radial_ground_state(3, 0.5);
  EXPECT_NEAR(g.lambda, kPi * kPi, 1e-8);
  for (std::size_t k = 1; k < g.s.size(); ++k)
    EXPECT_NEAR(g.phi[k], std::sin(kPi * g.s[k]) / (kPi * g.s[k]), 1e-7);
}

TEST(RadialGroundState, TwoDimensionalBall) {
  const double j01 = std_bessel_zero(0.0);
  const auto g = radial_ground_state(2, 0.5);
  EXPECT_NEAR(g.lambda, j01 * j01, 1e-8);
  for (double t : {0.1, 0.33, 0.8}) EXPECT_NEAR(g.phi_at(t), std::cyl_bessel_j(0.0, j01 * t), 1e-7);
}

TEST(RadialGroundState, MonotoneWithZeroAtOuterRadius) {
  for (int N : {2, 3, 4, 5}) {
    const auto g = radial_ground_state(N, 0.7, 512);
    EXPECT_EQ(g.phi.front(), 1.0);
    EXPECT_NEAR(g.phi.back(), 0.0, 1e-8);
    for (std::size_t k = 1; k < g.phi.size(); ++k) EXPECT_LT(g.phi[k], g.phi[k - 1]);
    EXPECT_NEAR(ball_radius_for_eigenvalue(N, g.lambda), 0.7, 1e-8);
  }
  EXPECT_THROW(radial_ground_state(1, 1.0), Error);
  EXPECT_THROW(radial_ground_state(3, -1.0), Error);
  EXPECT_THROW(radial_ground_state(3, 1.0, 10), Error);
}

TEST(Cap, RestIsHemisphereModeOnS2) {
  const auto c = cap_eigenvalue(3, 0.0, 4096);
  EXPECT_NEAR(c.lambda1, 2.0, 1e-6);
  EXPECT_NEAR(c.theta_r, kPi / 2.0, 1e-15);
  double worst = 0.0;
  for (std::size_t k = 0; k < c.theta.size(); ++k) worst = std::max(worst, std::abs(c.profile[k] - std::cos(c.theta[k])));
  EXPECT_LE(worst, 1e-4);
}

TEST(Cap, RestValuesAreNMinusOne) {
  for (int N : {3, 4, 5}) EXPECT_NEAR(cap_eigenvalue(N, 0.0).lambda1, N - 1.0, 1e-6);
}

TEST(Cap, NonincreasingWithNegativeSlope) {
  for (int N : {3, 4, 5}) {
    double prev = INFINITY;
    for (int q = 0; q <= 5; ++q) {
      const auto c = cap_eigenvalue(N, 0.1 * q);
      EXPECT_LE(c.lambda1, prev);
      EXPECT_LE(c.lambda1, N - 1.0 + 1e-9);
      EXPECT_NEAR(c.theta_r, std::acos(-0.05 * q), 1e-15);
      prev = c.lambda1;
    }
    EXPECT_LT((cap_eigenvalue(N, 0.01).lambda1 - cap_eigenvalue(N, 0.0).lambda1) / 0.01, 0.0);
  }
}

TEST(Cap, ProfileShape) {
  const auto c = cap_eigenvalue(4, 0.3, 1024);
  EXPECT_EQ(c.profile.front(), 1.0);
  EXPECT_EQ(c.profile.back(), 0.0);
  for (std::size_t k = 0; k + 1 < c.profile.size(); ++k) EXPECT_GT(c.profile[k], 0.0);
}

TEST(Cap, IntervalProblemInTwoDimensions) {
  const auto c = cap_eigenvalue(2, 0.4, 4096);
  const double oracle = std::pow(kPi / (2.0 * c.theta_r), 2);
  EXPECT_NEAR(c.lambda1, oracle, 1e-6 * oracle);
}

TEST(Cap, MatchesDenseWeightedOracle) {
  // independent scheme: weighted finite differences on a cell-centred grid,
  // dense symmetric eigensolver
  const int N = 3, M = 600;
  const double r = 0.35, tr = std::acos(-0.5 * r), dt = tr / M;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(M, M);
  Eigen::VectorXd w(M);
  for (int i = 0; i < M; ++i) {
    const double t = (i + 0.5) * dt;
    w(i) = std::pow(std::sin(t), N - 2);
    const double wl = i == 0 ? 0.0 : std::pow(std::sin(i * dt), N - 2);
    const double wr = std::pow(std::sin((i + 1) * dt), N - 2);
    A(i, i) = (wl + (i == M - 1 ? 2.0 * wr : wr)) / (dt * dt);
    if (i > 0) A(i, i - 1) = A(i - 1, i) = -wl / (dt * dt);
  }
  Eigen::VectorXd s = w.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd S = s.asDiagonal() * A * s.asDiagonal();
  const double oracle = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S).eigenvalues()(0);
  EXPECT_NEAR(cap_eigenvalue(N, r).lambda1, oracle, 1e-4);
  EXPECT_THROW(cap_eigenvalue(3, 1.0), Error);
}

TEST(Poincare, DistanceToCapIsBoundedAndScaleInvariant) {
  const auto d = lattice_domain(81, 81, 1.0 / 64, {-0.625, -0.625});
  const ExteriorBall ball;
  const auto f = ScalarField::sample(d, [&](Point p) { return std::max(distance(p, ball.center) - ball.radius, 0.0); });
  auto doubled = f.values();
  for (double& v : doubled) v *= 2.0;
  const ScalarField f2(d, doubled);
  const double q = poincare_check(f, {0.0, 0.0}, 0.5);
  EXPECT_TRUE(std::isfinite(q));
  EXPECT_GT(q, 0.0);
  EXPECT_NEAR(poincare_check(f2, {0.0, 0.0}, 0.5), q, 1e-12 * q);
}

TEST(Poincare, InteriorSupportHasNoBoundaryTerm) {
  const double h = 1.0 / 64;
  const auto d = lattice_domain(129, 129, h, {-1.0, -1.0});
  const auto f = ScalarField::sample(d, [](Point p) {
    const double rho = distance(p, {0.3, 0.0});
    return rho < 0.15 ? std::pow(std::cos(kPi * rho / 0.3), 2) : 0.0;
  });
  // interior quotient computed directly
  double mass = 0.0, energy = 0.0;
  for (int j = 0; j + 1 < d->ny(); ++j)
    for (int i = 0; i + 1 < d->nx(); ++i) {
      const double c = f.at(i, j);
      mass += c * c * h * h;
      energy += std::pow(f.at(i + 1, j) - c, 2) + std::pow(f.at(i, j + 1) - c, 2);
    }
  EXPECT_NEAR(poincare_check(f, {0.0, 0.0}, 0.9), mass / (0.81 * energy), 1e-9);
}

TEST(Poincare, Errors) {
  const auto d = lattice_domain(41, 41, 1.0 / 32, {-0.625, -0.625});
  try {
    poincare_check(ScalarField::sample(d, [](Point) { return 1.0; }), {0.0, 0.0}, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "constraint violated");
  }
  EXPECT_THROW(poincare_check(ScalarField(d), {0.0, 0.0}, 0.5), Error);
}
