// Ground states of the masked 5-point Dirichlet Laplacian, plus 1-D
// reference solvers: Bessel zeros, radial ball ground states, spherical-cap
// Laplace-Beltrami eigenvalues and a Poincare-type quotient.
#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "segpart/grid.hpp"

namespace segpart {

struct EigenOptions {
  double tol = 1e-8;           // on ||Delta_h u + lambda u||_{l2}
  int max_iterations = 10000;  // outer inverse-iteration steps
  double shift_switch = 1e-3;  // residual below which the Rayleigh shift kicks in
  std::uint64_t seed = 0;      // 0: constant start vector
};

struct EigenResult {
  double lambda = 0.0;
  ScalarField field;  // l2-normalized, nonnegative
  double residual = 0.0;
  int iterations = 0;
};

/// Smallest eigenpair of -Delta_h restricted to the allowed nodes, zero
/// elsewhere. Shifted inverse iteration: shift 0 until the residual drops
/// below opts.shift_switch, then the running Rayleigh quotient. Each shifted
/// system is solved by a sparse LDL^T factorization, which stays valid when
/// the shift makes the operator indefinite. On a disconnected region the
/// iteration settles on the component with the lowest eigenvalue.
inline EigenResult first_dirichlet_eig(const Mask& allowed, const EigenOptions& opts = {}) {
  using SpMat = Eigen::SparseMatrix<double>;
  using Vec = Eigen::VectorXd;
  if (!(opts.tol > 0.0)) throw Error("eigen tolerance must be positive");
  const auto& d = *allowed.domain();
  const double h = d.h();
  const double inv_h2 = 1.0 / (h * h);

  std::vector<std::ptrdiff_t> id(d.size(), -1);
  std::vector<std::size_t> nodes;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (allowed[k]) {
      id[k] = static_cast<std::ptrdiff_t>(nodes.size());
      nodes.push_back(k);
    }
  const auto n = static_cast<Eigen::Index>(nodes.size());
  if (n == 0) throw Error("empty region");

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(5 * n));
  for (Eigen::Index a = 0; a < n; ++a) {
    const std::size_t k = nodes[static_cast<std::size_t>(a)];
    const int i = d.col(k), j = d.row(k);
    trip.emplace_back(a, a, 4.0 * inv_h2);
    const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
    for (int s = 0; s < 4; ++s) {
      const int ii = i + di[s], jj = j + dj[s];
      if (ii < 0 || jj < 0 || ii >= d.nx() || jj >= d.ny()) continue;
      const auto b = id[d.index(ii, jj)];
      if (b >= 0) trip.emplace_back(a, b, -inv_h2);
    }
  }
  SpMat A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());

  Vec x = Vec::Ones(n);
  if (opts.seed != 0) {
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> jitter(0.0, 0.1);
    for (Eigen::Index a = 0; a < n; ++a) x[a] += jitter(rng);
  }
  x.normalize();

  Eigen::SimplicialLDLT<SpMat> solver;
  solver.analyzePattern(A);
  double sigma = 0.0;
  auto factor = [&](double shift) {
    SpMat B = A;
    for (Eigen::Index a = 0; a < n; ++a) B.coeffRef(a, a) -= shift;
    solver.factorize(B);
    return solver.info() == Eigen::Success;
  };
  if (!factor(sigma)) throw Error("eigensolver: factorization failed");

  Vec Ax = A * x;
  double lambda = x.dot(Ax);
  double residual = (Ax - lambda * x).norm();
  int it = 0;
  while (residual > opts.tol) {
    if (it >= opts.max_iterations)
      throw Error("eigensolver did not converge; last residual " + std::to_string(residual));
    if (residual < opts.shift_switch && lambda != sigma) {
      sigma = lambda;
      if (!factor(sigma)) {
        sigma = lambda * (1.0 - 1e-9);
        if (!factor(sigma)) throw Error("eigensolver: factorization failed");
      }
    }
    Vec y = solver.solve(x);
    if (!y.allFinite() || y.norm() == 0.0) {
      // exact hit on an eigenvalue; nudge the shift off it
      sigma = sigma * (1.0 - 1e-9) - 1e-12;
      if (!factor(sigma)) throw Error("eigensolver: factorization failed");
      y = solver.solve(x);
    }
    ++it;
    x = y / y.norm();
    if (x.sum() < 0.0) x = -x;
    Ax.noalias() = A * x;
    lambda = x.dot(Ax);
    residual = (Ax - lambda * x).norm();
  }

  // Round-off can leave values of order 1e-17 with the wrong sign on the
  // components that do not carry the ground state.
  for (Eigen::Index a = 0; a < n; ++a) x[a] = std::max(x[a], 0.0);
  x.normalize();
  Ax.noalias() = A * x;
  lambda = x.dot(Ax);
  residual = (Ax - lambda * x).norm();

  std::vector<double> values(d.size(), 0.0);
  for (Eigen::Index a = 0; a < n; ++a) values[nodes[static_cast<std::size_t>(a)]] = x[a] / h;
  return {lambda, ScalarField(allowed.domain(), std::move(values)), residual, it};
}

/// Richardson extrapolation of a quantity computed at spacings 2h and h,
/// assuming error ~ C h^order.
inline double richardson(double coarse, double fine, double order) {
  return fine + (fine - coarse) / (std::pow(2.0, order) - 1.0);
}

// ---------------------------------------------------------------------------
// Bessel functions of the first kind

/// J_nu(x) by its ascending series; adequate for x up to ~20.
inline double bessel_j_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = std::pow(0.5 * x, nu) / std::tgamma(nu + 1.0);
  double sum = term;
  for (int k = 1; k < 500; ++k) {
    term *= -q / (k * (k + nu));
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum) && k > q) break;
  }
  return sum;
}

/// First positive zero of J_nu for nu in [0, 5], to ~1e-12.
inline double bessel_first_zero(double nu) {
  if (!(nu >= 0.0 && nu <= 5.0)) throw Error("bessel_first_zero: nu must lie in [0, 5]");
  // J_nu > 0 on (0, j_{nu,1}); zeros are ~pi apart, so a 0.05 scan cannot
  // step over the first one.
  double lo = nu + 0.05, hi = lo;
  while (bessel_j_series(nu, hi) > 0.0) {
    lo = hi;
    hi += 0.05;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (bessel_j_series(nu, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Radial ground state of a ball

/// First Dirichlet eigenpair of the ball B_{2R} in R^N, as a radial profile
/// normalized by phi(0) = 1. Samples are uniform on [0, 2R].
struct RadialGroundState {
  int N = 2;
  double R = 0.0;
  double lambda = 0.0;
  std::vector<double> s;
  std::vector<double> phi;
  std::vector<double> dphi;

  double outer() const { return 2.0 * R; }

  /// Cubic Hermite interpolation of phi; clamps to [0, 2R].
  double phi_at(double t) const { return interpolate(t, false); }
  double dphi_at(double t) const { return interpolate(t, true); }

 private:
  double interpolate(double t, bool derivative) const {
    const double step = s[1] - s[0];
    t = std::clamp(t, 0.0, s.back());
    auto k = static_cast<std::size_t>(t / step);
    if (k >= s.size() - 1) k = s.size() - 2;
    const double u = (t - s[k]) / step;
    const double p0 = phi[k], p1 = phi[k + 1], m0 = dphi[k] * step, m1 = dphi[k + 1] * step;
    if (!derivative) {
      const double u2 = u * u, u3 = u2 * u;
      return (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1;
    }
    const double u2 = u * u;
    return ((6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 + (-6 * u2 + 6 * u) * p1 + (3 * u2 - 2 * u) * m1) /
           step;
  }
};

namespace detail {

// phi'' + (N-1)/s phi' + lambda phi = 0 from phi(0)=1, phi'(0)=0: power
// series for the first step off the singular endpoint, classical RK4 after.
// Returns false as soon as phi turns nonpositive when stop_at_zero is set.
inline bool integrate_radial(int N, double lambda, double outer, int steps, bool stop_at_zero,
                             std::vector<double>* phi_out, std::vector<double>* dphi_out) {
  const double ds = outer / steps;
  auto series = [&](double t, double& p, double& dp) {
    // sum_k (-lambda t^2/4)^k / (k! (N/2)_k)
    const double z = -0.25 * lambda * t * t;
    double term = 1.0, sum = 1.0, dsum = 0.0;
    for (int k = 1; k < 60; ++k) {
      term *= z / (k * (0.5 * N + k - 1));
      sum += term;
      dsum += term * 2.0 * k / t;
      if (std::abs(term) < 1e-18) break;
    }
    p = sum;
    dp = dsum;
  };
  double p = 1.0, dp = 0.0;
  if (phi_out) {
    phi_out->assign(static_cast<std::size_t>(steps) + 1, 0.0);
    dphi_out->assign(static_cast<std::size_t>(steps) + 1, 0.0);
    (*phi_out)[0] = 1.0;
  }
  series(ds, p, dp);
  if (phi_out) {
    (*phi_out)[1] = p;
    (*dphi_out)[1] = dp;
  }
  if (stop_at_zero && p <= 0.0) return false;
  const double c = N - 1.0;
  auto rhs = [&](double t, double y0, double y1, double& f0, double& f1) {
    f0 = y1;
    f1 = -c / t * y1 - lambda * y0;
  };
  for (int k = 1; k < steps; ++k) {
    const double t = k * ds;
    double a0, a1, b0, b1, c0, c1, d0, d1;
    rhs(t, p, dp, a0, a1);
    rhs(t + 0.5 * ds, p + 0.5 * ds * a0, dp + 0.5 * ds * a1, b0, b1);
    rhs(t + 0.5 * ds, p + 0.5 * ds * b0, dp + 0.5 * ds * b1, c0, c1);
    rhs(t + ds, p + ds * c0, dp + ds * c1, d0, d1);
    p += ds / 6.0 * (a0 + 2 * b0 + 2 * c0 + d0);
    dp += ds / 6.0 * (a1 + 2 * b1 + 2 * c1 + d1);
    if (phi_out) {
      (*phi_out)[static_cast<std::size_t>(k) + 1] = p;
      (*dphi_out)[static_cast<std::size_t>(k) + 1] = dp;
    }
    if (stop_at_zero && p <= 0.0) return false;
  }
  return true;
}

}  // namespace detail

/// Shoots lambda so that phi(2R) = 0, bisecting on "phi stays positive on
/// (0, 2R]" (true exactly below the first eigenvalue). The returned lambda
/// is the upper end of the positive side, so the profile is nonnegative.
inline RadialGroundState radial_ground_state(int N, double R, int samples = 1024) {
  if (N < 2) throw Error("radial_ground_state: N must be at least 2");
  if (!(R > 0.0)) throw Error("radial_ground_state: R must be positive");
  if (samples < 64) throw Error("radial_ground_state: need at least 64 samples");
  const double outer = 2.0 * R;
  const int sub = std::max(1, (8192 + samples - 1) / samples);
  const int steps = samples * sub;
  auto positive = [&](double lam) { return detail::integrate_radial(N, lam, outer, steps, true, nullptr, nullptr); };

  double lo = 0.0, hi = 1.0 / (R * R);
  int guard = 0;
  while (positive(hi)) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 200) throw Error("radial_ground_state: bracket failure");
  }
  for (int it = 0; it < 200 && hi - lo > 2e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (positive(mid) ? lo : hi) = mid;
  }

  std::vector<double> phi, dphi;
  detail::integrate_radial(N, lo, outer, steps, false, &phi, &dphi);
  RadialGroundState out;
  out.N = N;
  out.R = R;
  out.lambda = lo;
  out.s.resize(static_cast<std::size_t>(samples) + 1);
  out.phi.resize(out.s.size());
  out.dphi.resize(out.s.size());
  for (int k = 0; k <= samples; ++k) {
    const auto src = static_cast<std::size_t>(k) * sub;
    out.s[static_cast<std::size_t>(k)] = outer * k / samples;
    out.phi[static_cast<std::size_t>(k)] = std::max(phi[src], 0.0);
    out.dphi[static_cast<std::size_t>(k)] = dphi[src];
  }
  return out;
}

/// Radius R such that B_{2R} in R^N has first Dirichlet eigenvalue lambda.
inline double ball_radius_for_eigenvalue(int N, double lambda) {
  if (!(lambda > 0.0)) throw Error("eigenvalue must be positive");
  return bessel_first_zero(0.5 * N - 1.0) / (2.0 * std::sqrt(lambda));
}

// ---------------------------------------------------------------------------
// Spherical caps

/// First Dirichlet eigenvalue of the Laplace-Beltrami operator on the cap
/// {y in S^{N-1} : y_1 > -r/2}, reduced to the polar angle theta.
struct CapSpectrum {
  int N = 3;
  double r = 0.0;
  double theta_r = 0.0;
  double lambda1 = 0.0;
  std::vector<double> theta;
  std::vector<double> profile;  // w(0) = 1, w(theta_r) = 0
};

/// Finite volumes on a uniform theta grid: flux weights (sin theta)^{N-2} at
/// half nodes, the symmetry condition w'(0)=0 as a half cell at theta = 0,
/// w(theta_r) = 0. The lowest eigenvalue of the symmetrized tridiagonal
/// pencil comes from Sturm-sequence bisection; the profile from the
/// three-term recurrence started at w(0) = 1.
inline CapSpectrum cap_eigenvalue(int N, double r, int nodes = 4096) {
  if (N < 2) throw Error("cap_eigenvalue: N must be at least 2");
  if (!(r >= 0.0)) throw Error("cap_eigenvalue: r must be nonnegative");
  if (r >= 1.0) throw Error("cap_eigenvalue: r must be below 1");
  if (nodes < 16) throw Error("cap_eigenvalue: too few nodes");
  const int M = nodes;
  const double theta_r = std::acos(-0.5 * r);
  const double dt = theta_r / M;
  auto weight = [&](double t) { return std::pow(std::sin(t), N - 2); };

  std::vector<double> flux(static_cast<std::size_t>(M)), mass(static_cast<std::size_t>(M));
  for (int j = 0; j < M; ++j) flux[static_cast<std::size_t>(j)] = weight((j + 0.5) * dt) / dt;
  {
    // half cell [0, dt/2], 4-point Gauss-Legendre
    const double xg[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    const double wg[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
    double m0 = 0.0;
    for (int q = 0; q < 4; ++q) m0 += wg[q] * weight(0.25 * dt * (1.0 + xg[q]));
    mass[0] = m0 * 0.25 * dt;
  }
  for (int j = 1; j < M; ++j) mass[static_cast<std::size_t>(j)] = dt * weight(j * dt);

  std::vector<double> diag(static_cast<std::size_t>(M)), off(static_cast<std::size_t>(M), 0.0);
  for (int j = 0; j < M; ++j) {
    const auto u = static_cast<std::size_t>(j);
    const double k = (j > 0 ? flux[u - 1] : 0.0) + flux[u];
    diag[u] = k / mass[u];
    if (j + 1 < M) off[u] = -flux[u] / std::sqrt(mass[u] * mass[u + 1]);
  }
  auto count_below = [&](double x) {
    int count = 0;
    double q = diag[0] - x;
    if (q < 0.0) ++count;
    for (int j = 1; j < M; ++j) {
      const auto u = static_cast<std::size_t>(j);
      if (q == 0.0) q = 1e-300;
      q = (diag[u] - x) - off[u - 1] * off[u - 1] / q;
      if (q < 0.0) ++count;
    }
    return count;
  };
  double lo = 0.0, hi = 0.0;
  for (int j = 0; j < M; ++j) {
    const auto u = static_cast<std::size_t>(j);
    hi = std::max(hi, diag[u] + std::abs(off[u]) + (j > 0 ? std::abs(off[u - 1]) : 0.0));
  }
  for (int it = 0; it < 300 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (count_below(mid) >= 1 ? hi : lo) = mid;
  }
  const double lambda = 0.5 * (lo + hi);

  CapSpectrum out;
  out.N = N;
  out.r = r;
  out.theta_r = theta_r;
  out.lambda1 = lambda;
  out.theta.resize(static_cast<std::size_t>(M) + 1);
  out.profile.assign(static_cast<std::size_t>(M) + 1, 0.0);
  for (int j = 0; j <= M; ++j) out.theta[static_cast<std::size_t>(j)] = j * dt;
  auto& w = out.profile;
  w[0] = 1.0;
  for (int j = 0; j + 1 < M; ++j) {
    const auto u = static_cast<std::size_t>(j);
    const double left = j > 0 ? flux[u - 1] * (w[u] - w[u - 1]) : 0.0;
    // flux balance of cell j: left - flux_j (w_{j+1} - w_j) = lambda m_j w_j
    w[u + 1] = w[u] + (left - lambda * mass[u] * w[u]) / flux[u];
  }
  w[static_cast<std::size_t>(M)] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Poincare-type quotient

struct ExteriorBall {
  Point center{-1.0, 0.0};
  double radius = 1.0;
};

/// ((1/r) \oint_{dB_r} f^2 + (1/r^2) \int_{B_r} f^2) / \int_{B_r} |grad f|^2
/// for f vanishing on B_r(c) intersected with the closed exterior ball. The
/// boundary term sums f^2 over the outermost node ring, rescaled so the ring
/// carries the length of the circle; the gradient term uses lattice edges
/// with both ends inside the ball (no boundary condition on dB_r).
inline double poincare_check(const ScalarField& f, Point center, double r, const ExteriorBall& ball = {}) {
  if (!(r > 0.0)) throw Error("poincare_check: radius must be positive");
  const auto& d = *f.domain();
  std::vector<std::uint8_t> in(d.size(), 0);
  std::size_t inside_count = 0;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d.contains(k) && distance(d.point(k), center) < r) {
      in[k] = 1;
      ++inside_count;
    }
  if (inside_count == 0) throw Error("poincare_check: no nodes inside the ball");
  const double eps = 1e-12 * ball.radius;
  bool nonzero = false;
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (!in[k]) continue;
    if (f[k] != 0.0) nonzero = true;
    if (f[k] != 0.0 && distance(d.point(k), ball.center) <= ball.radius + eps) throw Error("constraint violated");
  }
  if (!nonzero) throw Error("poincare_check: field vanishes identically");

  double ring_sum = 0.0, interior = 0.0, energy = 0.0;
  std::size_t ring = 0;
  for (int j = 0; j < d.ny(); ++j)
    for (int i = 0; i < d.nx(); ++i) {
      const std::size_t k = d.index(i, j);
      if (!in[k]) continue;
      interior += f[k] * f[k];
      bool edge = false;
      const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
      for (int s = 0; s < 4; ++s) {
        const int ii = i + di[s], jj = j + dj[s];
        const bool nb = ii >= 0 && jj >= 0 && ii < d.nx() && jj < d.ny() && in[d.index(ii, jj)];
        if (!nb) {
          edge = true;
        } else if (s == 0 || s == 2) {
          const double g = f[d.index(ii, jj)] - f[k];
          energy += g * g;
        }
      }
      if (edge) {
        ring_sum += f[k] * f[k];
        ++ring;
      }
    }
  if (!(energy > 0.0)) throw Error("poincare_check: vanishing gradient energy");
  const double h = d.h();
  const double boundary = ring > 0 ? 2.0 * std::numbers::pi * r / static_cast<double>(ring) * ring_sum : 0.0;
  return (boundary / r + interior * h * h / (r * r)) / energy;
}

}  // namespace segpart
