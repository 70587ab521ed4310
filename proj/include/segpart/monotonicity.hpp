// Ball-average functionals around a point: mean-value comparisons for
// eigen-subsolutions, the one-phase ACF functional Psi built on the radial
// ground state phi, and the two-phase CJK product.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "segpart/eigensolve.hpp"
#include "segpart/grid.hpp"
#include "segpart/io.hpp"

namespace segpart {

// ---------------------------------------------------------------------------
// Radial profile

/// phi on [0, 3R/2] (phi(0) = 1, first eigenfunction of B_{2R}), with
/// Gamma_phi(s) = (N-2) \int_s^{3R/2} t^{1-N} phi(t)^{-2} dt and
/// psi(s) = s^{N-2} phi(s)^2 Gamma_phi(s), psi(0) = 1.
/// For N = 2 only phi is filled; Gamma_phi and psi are left empty.
struct RadialProfile {
  int N = 3;
  double R_bar = 0.0;
  double lambda_bar = 0.0;
  std::vector<double> s;
  std::vector<double> phi;
  std::vector<double> gamma_phi;  // gamma_phi[0] = +inf
  std::vector<double> psi;
  RadialGroundState ground;

  double outer() const { return 1.5 * R_bar; }
  double phi_at(double t) const { return ground.phi_at(t); }
};

inline RadialProfile build_radial_profile(int N, double R_bar, int samples = 1024) {
  if (N < 2) throw Error("build_radial_profile: N must be at least 2");
  if (!(R_bar > 0.0)) throw Error("build_radial_profile: R_bar must be positive");
  if (samples < 256) throw Error("build_radial_profile: need at least 256 samples");
  RadialProfile p;
  p.N = N;
  p.R_bar = R_bar;
  p.ground = radial_ground_state(N, R_bar, 2 * samples);
  p.lambda_bar = p.ground.lambda;
  const double L = p.outer();
  const auto M = static_cast<std::size_t>(samples);
  p.s.resize(M + 1);
  p.phi.resize(M + 1);
  for (std::size_t k = 0; k <= M; ++k) {
    p.s[k] = L * static_cast<double>(k) / samples;
    p.phi[k] = p.phi_at(p.s[k]);
  }
  p.phi[0] = 1.0;
  if (N == 2) return p;

  // Panel integrals in the variable t = log s, where the integrand
  // s^{2-N} / phi^2 stays bounded; composite Simpson with 16 sub-intervals.
  auto panel = [&](double a, double b) {
    constexpr int kSub = 16;
    const double ta = std::log(a), tb = std::log(b), dt = (tb - ta) / kSub;
    auto g = [&](double t) {
      const double x = std::exp(t);
      const double f = p.phi_at(x);
      return std::pow(x, 2.0 - N) / (f * f);
    };
    double sum = g(ta) + g(tb);
    for (int q = 1; q < kSub; ++q) sum += (q % 2 ? 4.0 : 2.0) * g(ta + q * dt);
    return sum * dt / 3.0;
  };
  p.gamma_phi.assign(M + 1, 0.0);
  p.psi.assign(M + 1, 0.0);
  double acc = 0.0;
  for (std::size_t k = M; k-- > 1;) {
    acc += panel(p.s[k], p.s[k + 1]);
    p.gamma_phi[k] = (N - 2) * acc;
  }
  p.gamma_phi[0] = std::numeric_limits<double>::infinity();
  p.gamma_phi[M] = 0.0;
  p.psi[0] = 1.0;
  for (std::size_t k = 1; k <= M; ++k) p.psi[k] = std::pow(p.s[k], N - 2) * p.phi[k] * p.phi[k] * p.gamma_phi[k];
  return p;
}

/// Smallest C with |psi(s) - 1| <= C s on the sampled s in (0, R_bar].
inline double fit_psi_constant(const RadialProfile& p) {
  if (p.psi.empty()) throw Error("psi is not defined for N = 2");
  double c = 0.0;
  for (std::size_t k = 1; k < p.s.size() && p.s[k] <= p.R_bar * (1.0 + 1e-12); ++k)
    c = std::max(c, std::abs(p.psi[k] - 1.0) / p.s[k]);
  return c;
}

// ---------------------------------------------------------------------------
// gamma(t) = sqrt(((N-2)/2)^2 + t) - (N-2)/2

inline double gamma_fun(int N, double t) {
  if (!(t >= 0.0)) throw Error("gamma_fun: t must be nonnegative");
  const double a = 0.5 * (N - 2);
  return std::sqrt(a * a + t) - a;
}

/// Central difference; one-sided at t = 0.
inline double gamma_derivative(int N, double t, double step = 1e-5) {
  if (t < step) return (gamma_fun(N, t + step) - gamma_fun(N, t)) / step;
  return (gamma_fun(N, t + step) - gamma_fun(N, t - step)) / (2.0 * step);
}

// ---------------------------------------------------------------------------
// Reports

struct MonotonicityReport {
  std::vector<double> radii;
  std::vector<double> values;
  double max_violation = 0.0;
  std::vector<std::pair<std::string, std::vector<double>>> columns;  // extra CSV columns
  std::map<std::string, double> constants;
  std::map<std::string, std::string> metadata;

  const std::vector<double>* column(const std::string& name) const {
    for (const auto& [key, col] : columns)
      if (key == name) return &col;
    return nullptr;
  }
};

/// Largest relative decrease (v[k] - v[k+1]) / v[k] over consecutive samples.
inline double max_relative_decrease(const std::vector<double>& v) {
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < v.size(); ++k)
    if (v[k] > 0.0) worst = std::max(worst, (v[k] - v[k + 1]) / v[k]);
  return worst;
}

/// Spearman rank correlation, average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto p, auto q) { return x[p] < x[q]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t q = i; q <= j; ++q) r[idx[q]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    sab += (ra[k] - ma) * (rb[k] - mb);
    saa += (ra[k] - ma) * (ra[k] - ma);
    sbb += (rb[k] - mb) * (rb[k] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline std::string report_csv(const MonotonicityReport& rep) {
  std::string out = "r,value";
  for (const auto& c : rep.columns) out += "," + c.first;
  out += "\n";
  for (std::size_t k = 0; k < rep.radii.size(); ++k) {
    out += io::format_double(rep.radii[k]) + "," + io::format_double(rep.values[k]);
    for (const auto& c : rep.columns) out += "," + io::format_double(c.second[k]);
    out += "\n";
  }
  return out;
}

inline nlohmann::ordered_json report_json(const MonotonicityReport& rep) {
  nlohmann::ordered_json j;
  j["max_violation"] = rep.max_violation;
  j["fitted_constants"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : rep.constants) j["fitted_constants"][k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nullptr;
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : rep.metadata) j["metadata"][k] = v;
  return j;
}

namespace detail {

inline void check_radii(const std::vector<double>& radii) {
  if (radii.empty()) throw Error("no radii given");
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (!(radii[k] > 0.0) || !std::isfinite(radii[k])) throw Error("radii must be positive");
    if (k > 0 && !(radii[k] > radii[k - 1])) throw Error("radii must be strictly increasing");
  }
}

/// Distance from c to the nearest lattice node outside the domain, or to the
/// lattice frame when every node is inside.
inline double inscribed_distance(const GridDomain& d, Point c) {
  double best = std::min({c.x - d.origin().x, d.origin().x + d.h() * (d.nx() - 1) - c.x, c.y - d.origin().y,
                          d.origin().y + d.h() * (d.ny() - 1) - c.y});
  for (std::size_t k = 0; k < d.size(); ++k)
    if (!d.contains(k)) best = std::min(best, distance(d.point(k), c));
  return best;
}

inline double distance_to_frame(const GridDomain& d, Point c) {
  return std::min({c.x - d.origin().x, d.origin().x + d.h() * (d.nx() - 1) - c.x, c.y - d.origin().y,
                   d.origin().y + d.h() * (d.ny() - 1) - c.y});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mean-value comparison

/// For v >= 0 with -Delta v <= lambda v, compares A(r) = r^{-2} \int_{B_r} v
/// against A(R) / phi(R) for all sampled r < R, where phi is the ground state
/// of the ball whose first eigenvalue is lambda (phi = 1 when lambda = 0).
/// values = A(r); column "phi_weighted" = r^{-2} \int_{B_r} v / phi, which
/// should be nondecreasing. max_violation is the largest relative excess of
/// A(r) over A(R) / phi(R).
inline MonotonicityReport mean_value_check(const ScalarField& v, double lambda, Point center,
                                           const std::vector<double>& radii) {
  detail::check_radii(radii);
  if (!(lambda >= 0.0)) throw Error("mean_value_check: lambda must be nonnegative");
  const auto& d = *v.domain();
  const auto node = d.nearest_node(center);
  if (node < 0 || !d.contains(static_cast<std::size_t>(node))) throw Error("center off the domain mask");
  if (radii.back() > detail::inscribed_distance(d, center) + 1e-12)
    throw Error("radius exceeds the inscribed distance");
  for (double x : v.values())
    if (x < 0.0) throw Error("mean_value_check: v must be nonnegative");

  std::optional<RadialGroundState> ground;
  if (lambda > 0.0) {
    ground = radial_ground_state(2, ball_radius_for_eigenvalue(2, lambda), 2048);
    if (radii.back() >= ground->outer()) throw Error("radius reaches the zero of the comparison profile");
  }
  auto phi = [&](double t) { return ground ? ground->phi_at(t) : 1.0; };

  MonotonicityReport rep;
  rep.radii = radii;
  std::vector<double> weighted;
  for (double r : radii) {
    rep.values.push_back(ball_integral(d, center, r, [&](std::size_t k) { return v[k]; }) / (r * r));
    weighted.push_back(
        ball_integral(d, center, r, [&](std::size_t k) { return v[k] / phi(distance(d.point(k), center)); }) /
        (r * r));
  }
  double worst = 0.0;
  for (std::size_t b = 0; b < radii.size(); ++b) {
    const double bound = rep.values[b] / phi(radii[b]);
    if (!(bound > 0.0)) continue;
    for (std::size_t a = 0; a < b; ++a) worst = std::max(worst, (rep.values[a] - bound) / bound);
  }
  rep.max_violation = worst;

  // nodewise subsolution defect max(-Delta_h v - lambda v)_+ / max(lambda v, |Delta_h v|)
  double defect = 0.0, scale = 0.0;
  const double h2 = d.h() * d.h();
  for (int j = 0; j < d.ny(); ++j)
    for (int i = 0; i < d.nx(); ++i) {
      const std::size_t k = d.index(i, j);
      if (!d.contains(k) || distance(d.point(k), center) > radii.back()) continue;
      const double lap = (v.at(i + 1, j) + v.at(i - 1, j) + v.at(i, j + 1) + v.at(i, j - 1) - 4.0 * v[k]) / h2;
      defect = std::max(defect, -lap - lambda * v[k]);
      scale = std::max({scale, lambda * v[k], std::abs(lap)});
    }
  rep.columns.emplace_back("phi_weighted", weighted);
  rep.constants["lambda"] = lambda;
  rep.constants["R_bar"] = ground ? ground->R : std::numeric_limits<double>::infinity();
  rep.constants["weighted_max_violation"] = max_relative_decrease(weighted);
  rep.constants["subsolution_defect"] = scale > 0.0 ? defect / scale : 0.0;
  rep.metadata["check"] = "mean_value";
  rep.metadata["dimension"] = "2";
  return rep;
}

// ---------------------------------------------------------------------------
// One-phase ACF functional

/// Psi(r) = e^{Cr} r^{-2} \int_{B_r(c)} phi^2 |grad(u/phi)|^2 with the N = 2
/// weight (identically 1), phi centred at c. u must vanish on the closed
/// exterior ball intersected with the largest sampled ball. Columns:
/// "dirichlet_average" = r^{-2} \int_{B_r} |grad u|^2 and the two sandwich
/// ratios against Psi.
inline MonotonicityReport acf_psi_functional(const ScalarField& u, const RadialProfile& profile, Point center,
                                             const std::vector<double>& radii, double C,
                                             std::optional<ExteriorBall> exterior = std::nullopt) {
  detail::check_radii(radii);
  const auto& d = *u.domain();
  const double h = d.h();
  const double rmax = radii.back();
  const ExteriorBall ball = exterior.value_or(ExteriorBall{{center.x - 1.0, center.y}, 1.0});
  if (detail::distance_to_frame(d, center) < rmax + 3.0 * h) throw Error("center too close to the boundary");
  if (rmax + 3.0 * h >= 2.0 * profile.R_bar) throw Error("radius reaches the zero of phi");
  if (profile.N != 2) throw Error("acf_psi_functional: 2-D grids need an N = 2 profile");

  bool any = false;
  std::vector<double> w(d.size(), 0.0);
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (u[k] < 0.0) throw Error("acf_psi_functional: u must be nonnegative");
    const Point p = d.point(k);
    const double rho = distance(p, center);
    if (rho > rmax + 3.0 * h) continue;
    if (u[k] != 0.0) {
      any = true;
      if (rho < rmax + 1e-12 && distance(p, ball.center) <= ball.radius * (1.0 + 1e-12))
        throw Error("constraint violated");
    }
    w[k] = u[k] / profile.phi_at(rho);
  }

  MonotonicityReport rep;
  rep.radii = radii;
  rep.constants["C"] = C;
  rep.constants["R_bar"] = profile.R_bar;
  rep.metadata["check"] = "psi";
  rep.metadata["weight"] = "N=2 variant: weight 1, r^-2 scaling";
  if (!any) {
    rep.values.assign(radii.size(), 0.0);
    rep.columns.emplace_back("dirichlet_average", rep.values);
    rep.constants["sandwich_lower"] = 0.0;
    rep.constants["sandwich_upper"] = 0.0;
    return rep;
  }

  const ScalarField wf(u.domain(), std::move(w));
  const auto gw = gradient_norm_sq(wf);
  const auto gu = gradient_norm_sq(u);
  std::vector<double> dir, lower, upper;
  double c_lower = 0.0, c_upper = 0.0;
  for (double r : radii) {
    const double I = ball_integral(d, center, r, [&](std::size_t k) {
      const double f = profile.phi_at(distance(d.point(k), center));
      return f * f * gw[k];
    });
    const double D = ball_integral(d, center, r, [&](std::size_t k) { return gu[k]; }) / (r * r);
    const double psi = std::exp(C * r) * I / (r * r);
    rep.values.push_back(psi);
    dir.push_back(D);
    lower.push_back(psi > 0.0 ? D / psi : std::numeric_limits<double>::infinity());
    upper.push_back(D > 0.0 ? psi / D : std::numeric_limits<double>::infinity());
    c_lower = std::max(c_lower, lower.back());
    c_upper = std::max(c_upper, upper.back());
  }
  rep.max_violation = max_relative_decrease(rep.values);
  rep.columns.emplace_back("dirichlet_average", dir);
  rep.columns.emplace_back("dirichlet_over_psi", lower);
  rep.columns.emplace_back("psi_over_dirichlet", upper);
  rep.constants["sandwich_lower"] = c_lower;
  rep.constants["sandwich_upper"] = c_upper;
  return rep;
}

/// Scans C over {0, 1, 2, 4, 8} / R_bar (or the given multipliers); returns
/// the report for the smallest C meeting the tolerance, else the one with the
/// smallest violation.
inline MonotonicityReport scan_psi_constant(const ScalarField& u, const RadialProfile& profile, Point center,
                                            const std::vector<double>& radii, double tolerance = 0.02,
                                            std::vector<double> multipliers = {0.0, 1.0, 2.0, 4.0, 8.0},
                                            std::optional<ExteriorBall> exterior = std::nullopt) {
  std::optional<MonotonicityReport> best;
  std::vector<double> scanned;
  for (double m : multipliers) {
    auto rep = acf_psi_functional(u, profile, center, radii, m / profile.R_bar, exterior);
    scanned.push_back(rep.max_violation);
    const bool better = !best || rep.max_violation < best->max_violation;
    if (better) best = std::move(rep);
    if (best->max_violation <= tolerance) break;
  }
  for (std::size_t k = 0; k < scanned.size(); ++k)
    best->constants["violation_at_C" + std::to_string(k)] = scanned[k];
  best->constants["tolerance"] = tolerance;
  return *best;
}

// ---------------------------------------------------------------------------
// Two-phase CJK product

/// prod_i r^{-2} \int_{B_r} |grad u_i|^2 (2-D: weight 1). Columns "phase1",
/// "phase2"; constants "max_over_min" and "spearman" (radius vs product).
inline MonotonicityReport cjk_product(const ScalarField& u1, const ScalarField& u2, Point center,
                                      const std::vector<double>& radii) {
  detail::check_radii(radii);
  const auto& d = *u1.domain();
  if (u2.domain()->size() != d.size()) throw Error("cjk_product: fields live on different grids");
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (u1[k] < 0.0 || u2[k] < 0.0) throw Error("cjk_product: fields must be nonnegative");
    if (u1[k] * u2[k] != 0.0) throw Error("overlapping supports");
  }
  const auto g1 = gradient_norm_sq(u1);
  const auto g2 = gradient_norm_sq(u2);
  MonotonicityReport rep;
  rep.radii = radii;
  std::vector<double> p1, p2;
  for (double r : radii) {
    p1.push_back(ball_integral(d, center, r, [&](std::size_t k) { return g1[k]; }) / (r * r));
    p2.push_back(ball_integral(d, center, r, [&](std::size_t k) { return g2[k]; }) / (r * r));
    rep.values.push_back(p1.back() * p2.back());
  }
  rep.max_violation = max_relative_decrease(rep.values);
  rep.columns.emplace_back("phase1", p1);
  rep.columns.emplace_back("phase2", p2);
  const auto [lo, hi] = std::minmax_element(rep.values.begin(), rep.values.end());
  rep.constants["max_over_min"] = *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
  rep.constants["spearman"] = radii.size() >= 2 ? spearman(radii, rep.values) : 0.0;
  rep.metadata["check"] = "cjk";
  rep.metadata["weight"] = "2-D convention: weight 1, r^-2 scaling per phase";
  return rep;
}

}  // namespace segpart
