// Distance-constrained spectral partitions: feasible initialization,
// block-coordinate relaxation with an interface exchange move, the cutoff
// competitor and r-sweeps warm-started from larger separations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "segpart/eigensolve.hpp"
#include "segpart/grid.hpp"
#include "segpart/io.hpp"

namespace segpart {

struct PartitionProblem {
  DomainPtr domain;
  int k = 2;
  double r = 0.0;
  std::uint64_t seed = 1;
  double tol_outer = 1e-6;
  double tol_eig = 1e-8;
  int max_outer = 200;
  double tau = 1e-3;
  std::vector<Point> sites;  // optional initial sites; random when empty
  int lloyd_iterations = 25;
  bool exchange = true;      // interface exchange move in relax_step
};

struct PartitionState {
  std::vector<ScalarField> fields;
  std::vector<Mask> supports;
  std::vector<double> lambdas;
  double c = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  bool stalled = false;
  int exchanges_accepted = 0;

  int k() const { return static_cast<int>(fields.size()); }
};

/// Nodes of two supports must be farther apart than max(r - h, 0); for r < h
/// this is plain disjointness.
inline double exclusion_radius(double r, double h) { return std::max(r - h, 0.0); }

namespace detail {

inline void validate(const PartitionProblem& p) {
  if (!p.domain) throw Error("partition problem without a domain");
  if (p.k < 1) throw Error("k must be at least 1");
  if (!(p.r >= 0.0) || !std::isfinite(p.r)) throw Error("r must be nonnegative");
  if (!(p.tau >= 0.0 && p.tau <= 0.1)) throw Error("tau must lie in [0, 0.1]");
  if (!(p.tol_outer > 0.0) || !(p.tol_eig > 0.0)) throw Error("tolerances must be positive");
  if (p.max_outer < 1) throw Error("max_outer must be at least 1");
  if (p.lloyd_iterations < 0) throw Error("lloyd_iterations must be nonnegative");
  if (!p.sites.empty() && static_cast<int>(p.sites.size()) != p.k) throw Error("need exactly k sites");
}

/// Bounding-box diagonal of the domain nodes.
inline double domain_diameter(const GridDomain& d) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d.contains(k)) {
      const Point q = d.point(k);
      x0 = std::min(x0, q.x);
      x1 = std::max(x1, q.x);
      y0 = std::min(y0, q.y);
      y1 = std::max(y1, q.y);
    }
  return std::hypot(x1 - x0, y1 - y0);
}

inline Point centroid(const Mask& m) {
  const auto& d = *m.domain();
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (m[k]) {
      const Point q = d.point(k);
      sx += q.x;
      sy += q.y;
      ++n;
    }
  if (n == 0) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

/// Label-free processing order: components sorted by support centroid, then
/// by their node sets.
inline std::vector<int> canonical_order(const std::vector<Mask>& supports) {
  std::vector<Point> c;
  for (const auto& s : supports) c.push_back(centroid(s));
  std::vector<int> order(supports.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (c[a].x != c[b].x) return c[a].x < c[b].x;
    if (c[a].y != c[b].y) return c[a].y < c[b].y;
    return supports[a].bits() > supports[b].bits();
  });
  return order;
}

struct Block {
  ScalarField field;
  Mask support;
  double lambda;
};

/// Ground state on the allowed region, truncated to {u > tau max u} and
/// renormalized; lambda is the Rayleigh quotient of the truncated field.
inline Block solve_block(const Mask& allowed, const PartitionProblem& p) {
  EigenOptions opts;
  opts.tol = p.tol_eig;
  auto e = first_dirichlet_eig(allowed, opts);
  const auto& d = *allowed.domain();
  const double cut = p.tau * e.field.max();
  std::vector<double> v = e.field.values();
  std::vector<std::uint8_t> bits(d.size(), 0);
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (v[k] > cut && v[k] > 0.0) {
      bits[k] = 1;
    } else {
      v[k] = 0.0;
    }
  }
  ScalarField f(allowed.domain(), std::move(v));
  const double norm = std::sqrt(l2_norm_sq(f));
  std::vector<double> w = f.values();
  for (auto& x : w) x /= norm;
  ScalarField g(allowed.domain(), std::move(w));
  const double lam = rayleigh_quotient(g);
  return {std::move(g), Mask(allowed.domain(), std::move(bits)), lam};
}

inline Mask union_except(const std::vector<Mask>& supports, int skip, const DomainPtr& domain) {
  Mask u(domain);
  for (int j = 0; j < static_cast<int>(supports.size()); ++j)
    if (j != skip) u |= supports[static_cast<std::size_t>(j)];
  return u;
}

inline Mask allowed_region(const std::vector<Mask>& supports, int i, const PartitionProblem& p) {
  const double rho = exclusion_radius(p.r, p.domain->h());
  Mask allowed = Mask::whole(p.domain);
  const Mask others = union_except(supports, i, p.domain);
  if (!others.empty()) allowed.subtract(dilate(others, rho));
  return allowed;
}

inline double total_energy(const std::vector<double>& lambdas, const std::vector<Mask>& supports) {
  double c = 0.0;
  for (int i : canonical_order(supports)) c += lambdas[static_cast<std::size_t>(i)];
  return c;
}

/// Removes from each support, in canonical order, the nodes too close to the
/// supports processed before it.
inline void make_feasible(std::vector<Mask>& supports, double r) {
  if (supports.empty()) return;
  const auto& dom = supports.front().domain();
  const double rho = exclusion_radius(r, dom->h());
  Mask done(dom);
  for (int i : canonical_order(supports)) {
    auto& s = supports[static_cast<std::size_t>(i)];
    if (!done.empty()) s.subtract(dilate(done, rho));
    done |= s;
  }
}

/// Gauss-Seidel pass that solves every block on its full allowed region,
/// starting from the given supports; block `first` (if any) goes first and
/// so claims any slack left between the supports.
inline PartitionState rebuild(std::vector<Mask> supports, const PartitionProblem& p, int first = -1) {
  PartitionState s;
  const auto k = supports.size();
  std::vector<std::optional<Block>> blocks(k);
  auto order = canonical_order(supports);
  if (first >= 0) std::stable_partition(order.begin(), order.end(), [&](int i) { return i == first; });
  for (int i : order) {
    const Mask allowed = allowed_region(supports, i, p);
    if (allowed.empty()) throw Error("component squeezed out: " + std::to_string(i + 1));
    blocks[static_cast<std::size_t>(i)] = solve_block(allowed, p);
    supports[static_cast<std::size_t>(i)] = blocks[static_cast<std::size_t>(i)]->support;
  }
  for (auto& b : blocks) {
    s.fields.push_back(std::move(b->field));
    s.supports.push_back(std::move(b->support));
    s.lambdas.push_back(b->lambda);
  }
  s.c = total_energy(s.lambdas, s.supports);
  return s;
}

/// m steps of u <- u/2 + (sum of 4 neighbours)/8, zero outside the domain.
inline std::vector<double> diffuse(const ScalarField& u, int steps) {
  const auto& d = *u.domain();
  std::vector<double> a = u.values(), b(a.size(), 0.0);
  for (int s = 0; s < steps; ++s) {
    for (int j = 0; j < d.ny(); ++j)
      for (int i = 0; i < d.nx(); ++i) {
        const std::size_t k = d.index(i, j);
        if (!d.contains(k)) continue;
        double nb = 0.0;
        if (d.contains(i + 1, j)) nb += a[k + 1];
        if (d.contains(i - 1, j)) nb += a[k - 1];
        if (d.contains(i, j + 1)) nb += a[k + static_cast<std::size_t>(d.nx())];
        if (d.contains(i, j - 1)) nb += a[k - static_cast<std::size_t>(d.nx())];
        b[k] = 0.5 * a[k] + 0.125 * nb;
      }
    std::swap(a, b);
  }
  return a;
}

/// Turns disjoint labels into a feasible state: every label loses the nodes
/// within (rho + h) / 2 of the other labels, leftovers are cleared in
/// canonical order and each block is re-solved on its allowed region.
inline PartitionState labels_to_state(std::vector<Mask> labels, const PartitionProblem& p, int first = -1) {
  const double rho = exclusion_radius(p.r, p.domain->h());
  std::vector<Mask> shrunk;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Mask others = union_except(labels, static_cast<int>(i), p.domain);
    Mask m = labels[i];
    if (!others.empty()) m.subtract(dilate(others, 0.5 * (rho + p.domain->h())));
    shrunk.push_back(std::move(m));
  }
  make_feasible(shrunk, p.r);
  return rebuild(std::move(shrunk), p, first);
}

/// Labels every domain node by its nearest support (ties in canonical order).
inline std::vector<Mask> nearest_support_labels(const std::vector<Mask>& supports) {
  const auto& dom = supports.front().domain();
  const auto& d = *dom;
  const auto order = canonical_order(supports);
  std::vector<std::vector<double>> dist;
  for (const auto& m : supports) dist.push_back(squared_lattice_distance(d.nx(), d.ny(), m.bits()));
  std::vector<std::vector<std::uint8_t>> labels(supports.size(), std::vector<std::uint8_t>(d.size(), 0));
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (!d.contains(n)) continue;
    int best = -1;
    for (int i : order)
      if (best < 0 || dist[static_cast<std::size_t>(i)][n] < dist[static_cast<std::size_t>(best)][n]) best = i;
    labels[static_cast<std::size_t>(best)][n] = 1;
  }
  std::vector<Mask> masks;
  for (auto& l : labels) masks.emplace_back(dom, std::move(l));
  return masks;
}

/// Moves the interfaces of component i outward by one lattice layer; i is
/// rebuilt first so that it keeps the gained layer.
inline PartitionState shift_move(const PartitionState& s, int i, const PartitionProblem& p) {
  auto labels = nearest_support_labels(s.supports);
  const auto u = static_cast<std::size_t>(i);
  labels[u] = dilate(labels[u], p.domain->h());
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (j != u) labels[j].subtract(labels[u]);
  return labels_to_state(std::move(labels), p, i);
}

/// Threshold-dynamics move: diffuse every component, relabel nodes by the
/// largest diffused value and rebuild.
inline PartitionState exchange(const PartitionState& s, const PartitionProblem& p, int steps) {
  const auto& d = *p.domain;
  const auto k = s.fields.size();
  const auto order = canonical_order(s.supports);
  std::vector<std::vector<double>> smooth;
  for (const auto& f : s.fields) smooth.push_back(diffuse(f, steps));
  std::vector<std::vector<std::uint8_t>> labels(k, std::vector<std::uint8_t>(d.size(), 0));
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (!d.contains(n)) continue;
    int best = -1;
    double top = 0.0;
    for (int i : order)
      if (smooth[static_cast<std::size_t>(i)][n] > top) {
        top = smooth[static_cast<std::size_t>(i)][n];
        best = i;
      }
    if (best >= 0) labels[static_cast<std::size_t>(best)][n] = 1;
  }
  std::vector<Mask> masks;
  for (auto& l : labels) masks.emplace_back(p.domain, std::move(l));
  return labels_to_state(std::move(masks), p);
}

/// Step counts for diffusion lengths 2h, 4h, 8h, 16h (variance h^2/4 per step).
inline std::vector<int> exchange_steps() { return {16, 64, 256, 1024}; }

}  // namespace detail

/// Smallest node-to-node distance between two distinct supports.
inline double min_pairwise_distance(const std::vector<Mask>& supports) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < supports.size(); ++i)
    for (std::size_t j = i + 1; j < supports.size(); ++j) best = std::min(best, set_distance(supports[i], supports[j]));
  return best;
}

/// Feasibility at separation r, compared in exact squared lattice units.
inline bool is_feasible(const std::vector<Mask>& supports, double r) {
  if (supports.size() < 2) return true;
  const auto& d = *supports.front().domain();
  const double lim = detail::lattice_radius_sq(exclusion_radius(r, d.h()), d.h());
  for (std::size_t j = 1; j < supports.size(); ++j) {
    if (supports[j].empty()) continue;
    const auto sq = squared_lattice_distance(d.nx(), d.ny(), supports[j].bits());
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t n = 0; n < sq.size(); ++n)
        if (supports[i][n] && sq[n] <= lim) return false;
  }
  return true;
}

/// k Voronoi cells of seeded (or given) sites refined by Lloyd iterations;
/// each cell keeps the nodes farther than r/2 from every bisector, so kept
/// nodes of different cells are more than r apart. Ties in the Voronoi
/// assignment go to the lexicographically smaller site.
inline PartitionState init_partition(const PartitionProblem& p) {
  detail::validate(p);
  const auto& d = *p.domain;
  if (p.k >= 2 && !(p.r < detail::domain_diameter(d) / p.k)) throw Error("infeasible r");
  std::vector<std::size_t> nodes;
  for (std::size_t n = 0; n < d.size(); ++n)
    if (d.contains(n)) nodes.push_back(n);

  for (int attempt = 0; attempt < 50; ++attempt) {
    std::vector<Point> sites;
    if (attempt == 0 && !p.sites.empty()) {
      sites = p.sites;
    } else {
      std::mt19937_64 rng(p.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt));
      std::vector<std::size_t> pick = nodes;
      std::shuffle(pick.begin(), pick.end(), rng);
      if (pick.size() < static_cast<std::size_t>(p.k)) throw Error("infeasible r");
      for (int i = 0; i < p.k; ++i) sites.push_back(d.point(pick[static_cast<std::size_t>(i)]));
    }
    auto site_less = [&](int a, int b) {
      const Point A = sites[static_cast<std::size_t>(a)], B = sites[static_cast<std::size_t>(b)];
      return A.x != B.x ? A.x < B.x : A.y < B.y;
    };
    auto assign = [&]() {
      std::vector<int> owner(d.size(), -1);
      for (std::size_t n : nodes) {
        const Point q = d.point(n);
        int best = -1;
        double bd = 0.0;
        for (int i = 0; i < p.k; ++i) {
          const Point s = sites[static_cast<std::size_t>(i)];
          const double dd = (q.x - s.x) * (q.x - s.x) + (q.y - s.y) * (q.y - s.y);
          if (best < 0 || dd < bd || (dd == bd && site_less(i, best))) {
            best = i;
            bd = dd;
          }
        }
        owner[n] = best;
      }
      return owner;
    };
    for (int it = 0; it < p.lloyd_iterations; ++it) {
      const auto owner = assign();
      std::vector<double> sx(static_cast<std::size_t>(p.k), 0.0), sy = sx, cnt = sx;
      for (std::size_t n : nodes) {
        const auto i = static_cast<std::size_t>(owner[n]);
        const Point q = d.point(n);
        sx[i] += q.x;
        sy[i] += q.y;
        cnt[i] += 1.0;
      }
      for (std::size_t i = 0; i < sites.size(); ++i)
        if (cnt[i] > 0.0) sites[i] = {sx[i] / cnt[i], sy[i] / cnt[i]};
    }
    const auto owner = assign();
    std::vector<std::vector<std::uint8_t>> cells(static_cast<std::size_t>(p.k),
                                                 std::vector<std::uint8_t>(d.size(), 0));
    for (std::size_t n : nodes) {
      const int i = owner[n];
      const Point q = d.point(n);
      const Point si = sites[static_cast<std::size_t>(i)];
      bool keep = true;
      for (int j = 0; j < p.k && keep; ++j) {
        if (j == i) continue;
        const Point sj = sites[static_cast<std::size_t>(j)];
        const double sep = std::hypot(si.x - sj.x, si.y - sj.y);
        if (sep == 0.0) {
          keep = false;
          break;
        }
        const double di = (q.x - si.x) * (q.x - si.x) + (q.y - si.y) * (q.y - si.y);
        const double dj = (q.x - sj.x) * (q.x - sj.x) + (q.y - sj.y) * (q.y - sj.y);
        keep = (dj - di) / (2.0 * sep) > 0.5 * p.r;
      }
      if (keep) cells[static_cast<std::size_t>(i)][n] = 1;
    }
    std::vector<Mask> masks;
    bool ok = true;
    for (auto& c : cells) {
      masks.emplace_back(p.domain, std::move(c));
      ok = ok && !masks.back().empty();
    }
    if (!ok) continue;
    PartitionState s;
    for (const auto& m : masks) {
      auto b = detail::solve_block(m, p);
      s.fields.push_back(std::move(b.field));
      s.supports.push_back(std::move(b.support));
      s.lambdas.push_back(b.lambda);
    }
    s.c = detail::total_energy(s.lambdas, s.supports);
    return s;
  }
  throw Error("infeasible r");
}

/// One Gauss-Seidel pass in canonical order: each block is replaced by the
/// ground state of its allowed region when that lowers its eigenvalue. Then,
/// when p.exchange is set, one interface exchange move is tried and kept only
/// if it lowers c. The energy never increases.
inline PartitionState relax_step(const PartitionState& s, const PartitionProblem& p) {
  detail::validate(p);
  if (s.k() != p.k) throw Error("state and problem disagree on k");
  PartitionState out = s;
  for (int i : detail::canonical_order(out.supports)) {
    const auto u = static_cast<std::size_t>(i);
    const Mask allowed = detail::allowed_region(out.supports, i, p);
    if (allowed.empty()) throw Error("component squeezed out: " + std::to_string(i + 1));
    auto b = detail::solve_block(allowed, p);
    if (b.lambda <= out.lambdas[u]) {
      out.fields[u] = std::move(b.field);
      out.supports[u] = std::move(b.support);
      out.lambdas[u] = b.lambda;
    }
  }
  out.c = detail::total_energy(out.lambdas, out.supports);
  if (p.exchange && p.k >= 2) {
    // Diffusion lengths 2h..16h: the relabelled interface moves by roughly
    // the diffusion length times the relative gradient imbalance, so short
    // runs alone round back to the same node sets. Single-layer shifts cover
    // the lattice-scale moves that diffusion cannot resolve.
    std::optional<PartitionState> best;
    auto consider = [&](auto&& make) {
      try {
        auto t = make();
        if (t.c < out.c && (!best || t.c < best->c)) best = std::move(t);
      } catch (const Error&) {
        // a label vanished; this move is simply rejected
      }
    };
    for (int steps : detail::exchange_steps()) consider([&] { return detail::exchange(out, p, steps); });
    for (int i : detail::canonical_order(out.supports)) consider([&] { return detail::shift_move(out, i, p); });
    if (best) {
      best->outer_iterations = out.outer_iterations;
      best->exchanges_accepted = out.exchanges_accepted + 1;
      out = std::move(*best);
    }
  }
  out.outer_iterations = s.outer_iterations + 1;
  return out;
}

/// Iterates relax_step from s until the relative energy decrease stays below
/// tol_outer for three consecutive passes or max_outer passes have run.
inline PartitionState optimize_from(PartitionState s, const PartitionProblem& p) {
  PartitionState best = s;
  int quiet = 0;
  for (int pass = 0; pass < p.max_outer; ++pass) {
    PartitionState next = relax_step(s, p);
    const double rel = (s.c - next.c) / std::abs(s.c);
    quiet = rel < p.tol_outer ? quiet + 1 : 0;
    s = std::move(next);
    if (s.c < best.c || pass == 0) {
      const int it = s.outer_iterations;
      best = s;
      best.outer_iterations = it;
    }
    best.outer_iterations = s.outer_iterations;
    if (quiet >= 3) {
      best.converged = true;
      return best;
    }
  }
  best.stalled = true;
  return best;
}

inline PartitionState optimize(const PartitionProblem& p) { return optimize_from(init_partition(p), p); }

/// Sum of Rayleigh quotients recomputed from the fields.
inline double recompute_energy(const PartitionState& s) {
  std::vector<double> rq;
  for (const auto& f : s.fields) rq.push_back(rayleigh_quotient(f));
  return detail::total_energy(rq, s.supports);
}

// ---------------------------------------------------------------------------
// Cutoff competitor

struct CutoffResult {
  PartitionState state;
  double energy = 0.0;
  double neighborhood_area = 0.0;  // |N_r|
};

/// u_i * eta_i with eta_i = clamp((d_i - r/2) / (r/2), 0, 1). d_i is the
/// distance to the nodal interface, measured as the distance to the other
/// components' supports less half a cell (adjacent supports meet halfway
/// between nodes); nodes cut off by the support threshold next to the outer
/// boundary are not part of the interface. |N_r| counts support nodes with
/// d_i < r plus unsupported nodes within r + h/2 of two supports.
inline CutoffResult cutoff_competitor(const PartitionState& s0, double r) {
  if (!(r >= 0.0)) throw Error("cutoff radius must be nonnegative");
  if (s0.fields.empty()) throw Error("empty partition state");
  const auto& dom = s0.fields.front().domain();
  const auto& d = *dom;
  const double h = d.h();
  const auto k = s0.fields.size();
  std::vector<std::vector<double>> dist;
  for (const auto& m : s0.supports) {
    if (m.empty()) throw Error("empty support in the reference state");
    dist.push_back(lattice_distance(m));
  }
  CutoffResult out;
  std::size_t band = 0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (!d.contains(n)) continue;
    std::size_t owner = k, near = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (s0.supports[i][n]) owner = i;
      if (dist[i][n] < r + 0.5 * h) ++near;
    }
    if (owner == k) {
      if (near >= 2) ++band;
      continue;
    }
    double di = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (j != owner) di = std::min(di, dist[j][n] - 0.5 * h);
    if (di < r) ++band;
  }
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> v(d.size(), 0.0);
    std::vector<std::uint8_t> bits(d.size(), 0);
    for (std::size_t n = 0; n < d.size(); ++n) {
      if (!s0.supports[i][n]) continue;
      double di = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j)
        if (j != i) di = std::min(di, dist[j][n] - 0.5 * h);
      const double eta = r == 0.0 ? 1.0 : std::clamp((di - 0.5 * r) / (0.5 * r), 0.0, 1.0);
      v[n] = s0.fields[i][n] * eta;
      bits[n] = v[n] > 0.0;
    }
    ScalarField f(dom, std::move(v));
    const double m = l2_norm_sq(f);
    if (!(m > 0.0)) throw Error("component " + std::to_string(i + 1) + " annihilated by the cutoff");
    std::vector<double> w = f.values();
    for (auto& x : w) x /= std::sqrt(m);
    ScalarField g(dom, std::move(w));
    out.state.lambdas.push_back(rayleigh_quotient(g));
    out.state.fields.push_back(std::move(g));
    out.state.supports.emplace_back(dom, std::move(bits));
  }
  out.neighborhood_area = static_cast<double>(band) * h * h;
  out.state.c = detail::total_energy(out.state.lambdas, out.state.supports);
  out.energy = out.state.c;
  return out;
}

// ---------------------------------------------------------------------------
// Fits

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("fit needs two or more points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0.0) throw Error("fit needs distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

/// Least squares y = C x; residual = rms(y - Cx) / rms(y).
struct OriginFit {
  double slope = 0.0;
  double residual = 0.0;
};

inline OriginFit fit_through_origin(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty()) throw Error("fit needs points");
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += x[k] * x[k];
    sxy += x[k] * y[k];
    syy += y[k] * y[k];
  }
  if (sxx == 0.0) throw Error("fit needs a nonzero abscissa");
  OriginFit f;
  f.slope = sxy / sxx;
  double res = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) res += (y[k] - f.slope * x[k]) * (y[k] - f.slope * x[k]);
  f.residual = syy > 0.0 ? std::sqrt(res / syy) : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct GradientLocation {
  double max_grad = 0.0;
  double boundary_grad = 0.0;
  double ratio = 0.0;
};

/// Compares max |grad u| over {u > 0} with the max over nodes of {u > 0}
/// within 3h of a lattice node outside it.
inline GradientLocation gradient_location_check(const ScalarField& u) {
  const auto& d = *u.domain();
  std::vector<std::uint8_t> outside(d.size(), 0);
  bool any_in = false;
  for (std::size_t n = 0; n < d.size(); ++n) {
    outside[n] = u[n] > 0.0 ? 0 : 1;
    any_in = any_in || !outside[n];
  }
  GradientLocation g;
  if (!any_in) return g;
  const auto sq = squared_lattice_distance(d.nx(), d.ny(), outside);
  const auto grad = gradient_norm_sq(u);
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (outside[n]) continue;
    const double gn = std::sqrt(grad[n]);
    g.max_grad = std::max(g.max_grad, gn);
    if (sq[n] <= 9.0 + 1e-9) g.boundary_grad = std::max(g.boundary_grad, gn);
  }
  g.ratio = g.max_grad > 0.0 ? g.boundary_grad / g.max_grad : 0.0;
  return g;
}

inline GradientLocation gradient_location_check(const EigenResult& e) { return gradient_location_check(e.field); }

/// Fraction of free-boundary nodes (support nodes with a 4-neighbour in the
/// domain but outside the support) that see another support within r + 2h.
inline double exterior_sphere_fraction(const PartitionState& s, double r) {
  if (s.supports.size() < 2) return 1.0;
  const auto& d = *s.supports.front().domain();
  std::size_t total = 0, hit = 0;
  const double lim = detail::lattice_radius_sq(r + 2.0 * d.h(), d.h());
  for (std::size_t i = 0; i < s.supports.size(); ++i) {
    const Mask others = detail::union_except(s.supports, static_cast<int>(i), s.supports[i].domain());
    if (others.empty()) continue;
    const auto sq = squared_lattice_distance(d.nx(), d.ny(), others.bits());
    for (int j = 0; j < d.ny(); ++j)
      for (int c = 0; c < d.nx(); ++c) {
        const std::size_t n = d.index(c, j);
        if (!s.supports[i][n]) continue;
        bool edge = false;
        const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int q = 0; q < 4; ++q) {
          const int ii = c + di[q], jj = j + dj[q];
          if (d.contains(ii, jj) && !s.supports[i][d.index(ii, jj)]) edge = true;
        }
        if (!edge) continue;
        ++total;
        if (sq[n] <= lim) ++hit;
      }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
}

/// Midpoint of the closest pair (p in supp u_a, q in supp u_b) whose
/// midpoint lies nearest to the centroid of the domain.
inline Point free_boundary_point(const PartitionState& s, int a = 0, int b = 1) {
  if (a < 0 || b < 0 || a >= s.k() || b >= s.k() || a == b) throw Error("free_boundary_point: bad components");
  const auto& A = s.supports[static_cast<std::size_t>(a)];
  const auto& B = s.supports[static_cast<std::size_t>(b)];
  if (A.empty() || B.empty()) throw Error("free_boundary_point: empty support");
  const auto& d = *A.domain();
  const Point centre = detail::centroid(Mask::whole(A.domain()));
  const auto sqb = squared_lattice_distance(d.nx(), d.ny(), B.bits());
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < d.size(); ++n)
    if (A[n]) gap = std::min(gap, sqb[n]);
  const int reach = static_cast<int>(std::ceil(std::sqrt(gap))) + 1;
  Point best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (!A[n] || sqb[n] > gap + 1e-9) continue;
    const int i = d.col(n), j = d.row(n);
    for (int dj = -reach; dj <= reach; ++dj)
      for (int di = -reach; di <= reach; ++di) {
        const int ii = i + di, jj = j + dj;
        if (ii < 0 || jj < 0 || ii >= d.nx() || jj >= d.ny()) continue;
        if (!B[d.index(ii, jj)] || double(di) * di + double(dj) * dj > gap + 1e-9) continue;
        const Point p = d.point(i, j), q = d.point(ii, jj);
        const Point m{0.5 * (p.x + q.x), 0.5 * (p.y + q.y)};
        const double dm = distance(m, centre);
        if (dm < best_d) {
          best_d = dm;
          best = m;
        }
      }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  double r = 0.0;
  bool ok = false;
  std::string error;
  double c = 0.0;
  std::vector<double> lambdas;      // matched to the r = 0 components
  double lip_max = 0.0;
  double linf_max = 0.0;
  double holder_max = 0.0;
  std::vector<double> dist_to_u0;   // ||u_{i,r} - u_{i,0}||_inf per matched component
  std::vector<double> gradient_ratio;
  double exterior_fraction = 1.0;
  int outer_iterations = 0;
  bool converged = false;
};

struct SweepReport {
  std::vector<SweepRow> rows;  // increasing r
  std::vector<double> u0_linf; // ||u_{i,0}||_inf
  int k = 0;
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  std::uint64_t seed = 0;
  double tol_eig = 0.0;
  double tol_outer = 0.0;
  double tau = 0.0;
  std::string pass_style = "gauss-seidel";
};

inline double jaccard(const Mask& a, const Mask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t n = 0; n < a.bits().size(); ++n) {
    inter += a[n] && b[n];
    uni += a[n] || b[n];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// match[i] = component of `from` paired with reference component i; greedy
/// by Jaccard overlap, ties to the lower index.
inline std::vector<int> match_components(const std::vector<Mask>& reference, const std::vector<Mask>& from) {
  const auto k = reference.size();
  std::vector<int> match(k, -1);
  std::vector<bool> used(from.size(), false);
  for (std::size_t round = 0; round < k; ++round) {
    double best = -1.0;
    int bi = -1, bj = -1;
    for (std::size_t i = 0; i < k; ++i) {
      if (match[i] >= 0) continue;
      for (std::size_t j = 0; j < from.size(); ++j) {
        if (used[j]) continue;
        const double q = jaccard(reference[i], from[j]);
        if (q > best) {
          best = q;
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    if (bi < 0) break;
    match[static_cast<std::size_t>(bi)] = bj;
    used[static_cast<std::size_t>(bj)] = true;
  }
  return match;
}

/// Restarts from s at a smaller separation: every domain node is labelled
/// by its nearest support, then the labels are made feasible at r.
inline PartitionState warm_start(const PartitionState& s, const PartitionProblem& p) {
  return detail::labels_to_state(detail::nearest_support_labels(s.supports), p);
}

/// Optimizes at every r (given in decreasing order, ending with 0), each
/// warm-started from the last successful optimum; rows are matched to the
/// r = 0 components and returned in increasing r.
inline SweepReport run_sweep(const PartitionProblem& base, std::vector<double> r_values) {
  detail::validate(base);
  if (r_values.empty()) throw Error("empty r list");
  for (std::size_t k = 1; k < r_values.size(); ++k)
    if (!(r_values[k] < r_values[k - 1])) throw Error("r values must be strictly decreasing");
  if (r_values.back() != 0.0) throw Error("the sweep must end with r = 0");

  SweepReport rep;
  rep.k = base.k;
  rep.nx = base.domain->nx();
  rep.ny = base.domain->ny();
  rep.h = base.domain->h();
  rep.seed = base.seed;
  rep.tol_eig = base.tol_eig;
  rep.tol_outer = base.tol_outer;
  rep.tau = base.tau;

  std::vector<std::optional<PartitionState>> states(r_values.size());
  std::vector<SweepRow> rows(r_values.size());
  std::optional<PartitionState> prev;
  for (std::size_t t = 0; t < r_values.size(); ++t) {
    PartitionProblem p = base;
    p.r = r_values[t];
    rows[t].r = p.r;
    try {
      PartitionState s = prev ? optimize_from(warm_start(*prev, p), p) : optimize(p);
      if (!is_feasible(s.supports, p.r)) throw Error("optimizer returned an infeasible state");
      prev = s;
      states[t] = std::move(s);
      rows[t].ok = true;
    } catch (const Error& e) {
      rows[t].error = e.what();
    }
  }
  const auto& ref = states.back();
  if (!ref) throw Error("the r = 0 optimization failed: " + rows.back().error);
  const auto ref_order = detail::canonical_order(ref->supports);
  std::vector<Mask> ref_supports;
  for (int i : ref_order) {
    ref_supports.push_back(ref->supports[static_cast<std::size_t>(i)]);
    const auto& f = ref->fields[static_cast<std::size_t>(i)].values();
    rep.u0_linf.push_back(*std::max_element(f.begin(), f.end()));
  }
  for (std::size_t t = 0; t < r_values.size(); ++t) {
    if (!states[t]) continue;
    const auto& s = *states[t];
    auto& row = rows[t];
    row.c = s.c;
    row.outer_iterations = s.outer_iterations;
    row.converged = s.converged;
    row.exterior_fraction = exterior_sphere_fraction(s, row.r);
    const auto match = match_components(ref_supports, s.supports);
    for (std::size_t i = 0; i < match.size(); ++i) {
      const auto j = static_cast<std::size_t>(match[i]);
      const auto& f = s.fields[j];
      const Norms nm = norms(f, 0.5);
      row.lambdas.push_back(s.lambdas[j]);
      row.lip_max = std::max(row.lip_max, nm.lip);
      row.linf_max = std::max(row.linf_max, nm.linf);
      row.holder_max = std::max(row.holder_max, nm.holder);
      const auto& g = ref->fields[static_cast<std::size_t>(ref_order[i])];
      double dist = 0.0;
      for (std::size_t n = 0; n < f.values().size(); ++n) dist = std::max(dist, std::abs(f[n] - g[n]));
      row.dist_to_u0.push_back(dist);
      row.gradient_ratio.push_back(gradient_location_check(f).ratio);
    }
  }
  std::reverse(rows.begin(), rows.end());
  rep.rows = std::move(rows);
  return rep;
}

inline std::string sweep_csv(const SweepReport& rep) {
  std::string out = "r,c_r";
  for (int i = 1; i <= rep.k; ++i) out += ",lambda_" + std::to_string(i);
  out += ",lip_max,linf_max,holder_05,dist_to_u0,status\n";
  for (const auto& row : rep.rows) {
    out += io::format_double(row.r);
    if (!row.ok) {
      out += std::string(static_cast<std::size_t>(rep.k) + 6, ',') + "failed\n";
      continue;
    }
    out += "," + io::format_double(row.c);
    for (double l : row.lambdas) out += "," + io::format_double(l);
    const double dist = row.dist_to_u0.empty() ? 0.0 : *std::max_element(row.dist_to_u0.begin(), row.dist_to_u0.end());
    out += "," + io::format_double(row.lip_max) + "," + io::format_double(row.linf_max) + "," +
           io::format_double(row.holder_max) + "," + io::format_double(dist) + ",ok\n";
  }
  return out;
}

inline nlohmann::ordered_json sweep_json(const SweepReport& rep) {
  nlohmann::ordered_json j;
  std::vector<double> rs, cs;
  double c0 = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : rep.rows)
    if (row.ok) {
      rs.push_back(row.r);
      cs.push_back(row.c);
      if (row.r == 0.0) c0 = row.c;
    }
  std::size_t failed = 0;
  for (const auto& row : rep.rows) failed += !row.ok;
  j["k"] = rep.k;
  j["grid"] = {{"nx", rep.nx}, {"ny", rep.ny}, {"h", rep.h}};
  j["seed"] = rep.seed;
  j["tolerances"] = {{"eig", rep.tol_eig}, {"outer", rep.tol_outer}, {"tau", rep.tau}};
  j["pass_style"] = rep.pass_style;
  j["rows"] = rep.rows.size();
  j["failed_rows"] = failed;
  if (rs.size() >= 2) {
    std::vector<double> dc;
    for (double c : cs) dc.push_back(c - c0);
    const auto fit = fit_line(rs, dc);
    j["slope"] = fit.slope;
    j["intercept"] = fit.intercept;
    j["r2"] = fit.r2;
  }
  bool mono = true;
  for (std::size_t t = 1; t < cs.size(); ++t) mono = mono && cs[t] >= cs[t - 1];
  j["c_monotone"] = mono;
  auto& rows = j["per_row"] = nlohmann::ordered_json::array();
  for (const auto& row : rep.rows) {
    nlohmann::ordered_json o;
    o["r"] = row.r;
    o["ok"] = row.ok;
    if (!row.ok) {
      o["error"] = row.error;
    } else {
      o["c"] = row.c;
      o["lambdas"] = row.lambdas;
      o["dist_to_u0"] = row.dist_to_u0;
      o["gradient_ratio"] = row.gradient_ratio;
      o["exterior_fraction"] = row.exterior_fraction;
      o["outer_iterations"] = row.outer_iterations;
      o["converged"] = row.converged;
    }
    rows.push_back(o);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::ordered_json manifest(const PartitionState& s, const PartitionProblem& p) {
  nlohmann::ordered_json j;
  j["k"] = s.k();
  j["r"] = p.r;
  j["lambdas"] = s.lambdas;
  j["c"] = s.c;
  j["seed"] = p.seed;
  j["tolerances"] = {{"eig", p.tol_eig}, {"outer", p.tol_outer}, {"tau", p.tau}};
  j["grid"] = {{"nx", p.domain->nx()}, {"ny", p.domain->ny()}, {"h", p.domain->h()}};
  j["outer_iterations"] = s.outer_iterations;
  j["converged"] = s.converged;
  j["stalled"] = s.stalled;
  j["exchanges_accepted"] = s.exchanges_accepted;
  j["pass_style"] = "gauss-seidel";
  return j;
}

/// u<i>.spf1, support<i>.pgm (i from 1) and manifest.json.
inline void save_state(const std::filesystem::path& dir, const PartitionState& s, const PartitionProblem& p) {
  for (int i = 0; i < s.k(); ++i) {
    const auto tag = std::to_string(i + 1);
    io::write_spf1(dir / ("u" + tag + ".spf1"), s.fields[static_cast<std::size_t>(i)]);
    io::write_pgm(dir / ("support" + tag + ".pgm"), s.supports[static_cast<std::size_t>(i)]);
  }
  io::atomic_write(dir / "manifest.json", manifest(s, p).dump(2) + "\n");
}

}  // namespace segpart
