#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "segpart/eigensolve.hpp"
#include "segpart/partition.hpp"

using namespace segpart;

namespace {

constexpr double kPi = std::numbers::pi;

PartitionProblem rectangle_problem(int n, double r = 0.0) {
  PartitionProblem p;
  p.domain = build_domain(Shape::rectangle(2.0, 1.0), n);
  p.k = 2;
  p.r = r;
  return p;
}

// brute-force minimum node distance between two masks
double brute_gap(const Mask& a, const Mask& b) {
  const auto& d = *a.domain();
  double best = INFINITY;
  for (std::size_t p = 0; p < d.size(); ++p) {
    if (!a[p]) continue;
    for (std::size_t q = 0; q < d.size(); ++q)
      if (b[q]) best = std::min(best, distance(d.point(p), d.point(q)));
  }
  return best;
}

const PartitionState& rectangle_optimum_64() {
  static const PartitionState s = optimize(rectangle_problem(64));
  return s;
}

}  // namespace

TEST(Init, MirrorSitesGiveHalfRectangles) {
  auto p = rectangle_problem(32);
  p.sites = {{0.5, 0.5}, {1.5, 0.5}};
  const auto s = init_partition(p);
  const auto& d = *p.domain;
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (s.supports[0][n]) EXPECT_LE(d.point(n).x, 1.0 + 1e-12);
    if (s.supports[1][n]) EXPECT_GE(d.point(n).x, 1.0 - 1e-12);
  }
  const double a = static_cast<double>(s.supports[0].count()), b = static_cast<double>(s.supports[1].count());
  EXPECT_LE(std::abs(a - b), d.ny());
  EXPECT_GT(a + b, 0.95 * d.node_count());
}

TEST(Init, InfeasibleSeparation) {
  try {
    init_partition(rectangle_problem(32, 1.9));
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "infeasible r");
  }
}

TEST(Init, AcceptedStatesAreFeasibleByBruteForce) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double r : {0.0, 0.05, 0.2}) {
      auto p = rectangle_problem(24, r);
      p.seed = seed;
      p.k = 3;
      const auto s = init_partition(p);
      const double lim = exclusion_radius(r, p.domain->h());
      for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) EXPECT_GT(brute_gap(s.supports[i], s.supports[j]), lim - 1e-12);
      EXPECT_TRUE(is_feasible(s.supports, r));
    }
  }
}

TEST(Relax, SingleComponentIsGroundState) {
  PartitionProblem p;
  p.domain = build_domain(Shape::l_shape(1.0), 32);
  p.k = 1;
  const auto s0 = init_partition(p);
  const auto s1 = relax_step(s0, p);
  const double lambda = first_dirichlet_eig(Mask::whole(p.domain)).lambda;
  EXPECT_NEAR(s1.c, lambda, 1e-7 * lambda);
}

TEST(Relax, SymmetricOptimumIsAFixedPoint) {
  const auto& s = rectangle_optimum_64();
  const auto p = rectangle_problem(64);
  const auto next = relax_step(s, p);
  EXPECT_LT(std::abs(next.c - s.c) / s.c, p.tol_outer);
}

TEST(Relax, SqueezedComponentIsReported) {
  auto p = rectangle_problem(16, 0.0);
  p.k = 2;
  auto s = init_partition(p);
  // component 1 covers everything; at r = 0.5 nothing is left for component 2
  s.supports[0] = Mask::whole(p.domain);
  p.r = 0.5;
  try {
    relax_step(s, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("component squeezed out"), std::string::npos);
  }
}

TEST(Optimize, RectangleBelowSquareSplit) {
  const auto& s = rectangle_optimum_64();
  EXPECT_LE(s.c, 4.0 * kPi * kPi * 1.01);
  EXPECT_TRUE(s.converged);
  EXPECT_NEAR(s.c, recompute_energy(s), 10.0 * 1e-8 * s.c);
  EXPECT_NEAR(s.lambdas[0], s.lambdas[1], 0.01 * s.c);
}

TEST(Optimize, DiskBelowDiameterSplit) {
  PartitionProblem p;
  p.domain = build_domain(Shape::disk(1.0), 64);
  p.k = 2;
  const auto s = optimize(p);
  double lo = 0.5, hi = 0.5;
  while (std::cyl_bessel_j(1.0, hi) >= 0.0 || hi < 3.0) {
    lo = hi;
    hi += 0.01;
  }
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (std::cyl_bessel_j(1.0, mid) > 0.0 ? lo : hi) = mid;
  }
  const double j11 = 0.5 * (lo + hi);
  EXPECT_LE(s.c, 2.0 * j11 * j11 * 1.01);
}

TEST(Optimize, InvariantsOfReturnedState) {
  auto p = rectangle_problem(32, 0.1);
  const auto s = optimize(p);
  for (int i = 0; i < s.k(); ++i) {
    const auto& f = s.fields[static_cast<std::size_t>(i)];
    EXPECT_NEAR(std::sqrt(l2_norm_sq(f)), 1.0, 1e-10);
    for (std::size_t n = 0; n < f.values().size(); ++n) {
      EXPECT_GE(f[n], 0.0);
      if (!s.supports[static_cast<std::size_t>(i)][n]) EXPECT_EQ(f[n], 0.0);
    }
  }
  EXPECT_TRUE(is_feasible(s.supports, p.r));
  EXPECT_NEAR(s.c, recompute_energy(s), 10.0 * p.tol_eig * s.c);
}

TEST(Optimize, DeterministicGivenSeed) {
  auto p = rectangle_problem(24, 0.05);
  p.seed = 42;
  const auto a = optimize(p), b = optimize(p);
  EXPECT_EQ(a.c, b.c);
  for (int i = 0; i < a.k(); ++i) EXPECT_EQ(a.fields[i].values(), b.fields[i].values());
}

TEST(Cutoff, ZeroRadiusReproducesEnergy) {
  const auto& s = rectangle_optimum_64();
  const auto cut = cutoff_competitor(s, 0.0);
  EXPECT_NEAR(cut.energy, s.c, 1e-9 * s.c);
}

TEST(Cutoff, CompetitorIsFeasibleAndAboveOptimum) {
  const auto& s = rectangle_optimum_64();
  double prev = s.c;
  for (double r : {1.0 / 32, 1.0 / 16, 1.0 / 8}) {
    const auto cut = cutoff_competitor(s, r);
    EXPECT_TRUE(is_feasible(cut.state.supports, r));
    EXPECT_GT(cut.energy, prev);
    EXPECT_GT(cut.neighborhood_area, 0.0);
    prev = cut.energy;
  }
}

TEST(Cutoff, MinkowskiRatioNearInterfaceLength) {
  // the optimal k = 2 interface on rectangle(2, 1) is the unit segment x = 1
  const auto& s = rectangle_optimum_64();
  for (double r : {1.0 / 16, 1.0 / 8}) EXPECT_NEAR(cutoff_competitor(s, r).neighborhood_area / (2.0 * r), 1.0, 0.15);
}

TEST(Fits, LineAndOrigin) {
  const auto f = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_DOUBLE_EQ(f.slope, 2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 1.0);
  EXPECT_DOUBLE_EQ(f.r2, 1.0);
  const auto g = fit_through_origin({1, 2}, {2, 4});
  EXPECT_DOUBLE_EQ(g.slope, 2.0);
  EXPECT_DOUBLE_EQ(g.residual, 0.0);
  EXPECT_THROW(fit_line({1, 1}, {1, 2}), Error);
}

TEST(GradientLocation, DiskAndSquare) {
  for (const auto& shape : {Shape::disk(1.0), Shape::square(1.0)}) {
    const auto e = first_dirichlet_eig(Mask::whole(build_domain(shape, 64)));
    const auto g = gradient_location_check(e);
    EXPECT_NEAR(g.ratio, 1.0, 0.02);
    EXPECT_GT(g.max_grad, 0.0);
  }
}

TEST(GradientLocation, InteriorBumpIsNotAtBoundary) {
  // a radial bump whose gradient peaks well inside its support
  const auto d = build_domain(Shape::square(2.0), 64);
  const auto u = ScalarField::sample(d, [](Point p) {
    const double rho = distance(p, {1.0, 1.0});
    return rho < 0.9 ? std::pow(std::cos(0.5 * kPi * rho / 0.9), 8) : 0.0;
  });
  EXPECT_LT(gradient_location_check(u).ratio, 0.5);
}

TEST(FreeBoundary, SymmetricRectangleSplit) {
  const auto& s = rectangle_optimum_64();
  const Point x0 = free_boundary_point(s);
  EXPECT_NEAR(x0.x, 1.0, 0.02);
  EXPECT_NEAR(x0.y, 0.5, 0.02);
  EXPECT_THROW(free_boundary_point(s, 0, 0), Error);
}

TEST(Matching, JaccardAndGreedy) {
  const auto d = lattice_domain(4, 1, 1.0);
  Mask a(d, {1, 1, 0, 0}), b(d, {0, 0, 1, 1}), c(d, {0, 1, 1, 1});
  EXPECT_DOUBLE_EQ(jaccard(a, a), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(a, b), 0.0);
  EXPECT_DOUBLE_EQ(jaccard(b, c), 2.0 / 3.0);
  const auto m = match_components({a, b}, {c, a});
  EXPECT_EQ(m[0], 1);
  EXPECT_EQ(m[1], 0);
}

TEST(Sweep, SmallGridReport) {
  auto p = rectangle_problem(32);
  const auto rep = run_sweep(p, {0.125, 0.0625, 0.0});
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows.front().r, 0.0);
  for (std::size_t t = 0; t < rep.rows.size(); ++t) {
    ASSERT_TRUE(rep.rows[t].ok) << rep.rows[t].error;
    if (t > 0) EXPECT_GE(rep.rows[t].c, rep.rows[t - 1].c);
    for (double g : rep.rows[t].gradient_ratio) EXPECT_GE(g, 0.2);
  }
  for (double x : rep.rows.front().dist_to_u0) EXPECT_EQ(x, 0.0);
  const auto csv = sweep_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "r,c_r,lambda_1,lambda_2,lip_max,linf_max,holder_05,dist_to_u0,status");
  const auto j = sweep_json(rep);
  EXPECT_TRUE(j["c_monotone"].get<bool>());
  EXPECT_GT(j["slope"].get<double>(), 0.0);
  EXPECT_THROW(run_sweep(p, {0.0, 0.1}), Error);
  EXPECT_THROW(run_sweep(p, {0.1, 0.05}), Error);
}

TEST(Sweep, ExteriorSphereDiagnosticAtFineGrid) {
  auto p = rectangle_problem(128, 1.0 / 16);
  const auto s = optimize(p);
  EXPECT_GE(exterior_sphere_fraction(s, p.r), 0.8);
}

TEST(Persistence, SaveStateIsReproducible) {
  const auto dir = std::filesystem::temp_directory_path() / "segpart_persist_test";
  std::filesystem::remove_all(dir);
  const auto& s = rectangle_optimum_64();
  const auto p = rectangle_problem(64);
  save_state(dir / "a", s, p);
  save_state(dir / "b", s, p);
  for (const char* f : {"manifest.json", "u1.spf1", "u2.spf1", "support1.pgm", "support2.pgm"})
    EXPECT_EQ(io::read_file(dir / "a" / f), io::read_file(dir / "b" / f)) << f;
  const auto raw = io::read_spf1(dir / "a" / "u1.spf1");
  EXPECT_EQ(io::spf1_to_field(raw, p.domain).values(), s.fields[0].values());
  std::filesystem::remove_all(dir);
}
