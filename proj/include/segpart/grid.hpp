// Masked lattice domains, exact Euclidean distance transforms, morphology by
// Euclidean radius and discrete differential operators on scalar fields.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace segpart {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Rectangular lattice of nx*ny nodes with spacing h. Node (i, j) sits at
/// origin + h*(i, j) and is stored at index j*nx + i (row-major, rows along y).
/// Only nodes flagged in the domain mask are unknowns; every other node is a
/// Dirichlet node carrying the value 0.
class GridDomain {
 public:
  GridDomain(int nx, int ny, double h, Point origin, std::vector<std::uint8_t> inside)
      : nx_(nx), ny_(ny), h_(h), origin_(origin), inside_(std::move(inside)) {
    if (nx < 1 || ny < 1) throw Error("grid needs at least one node per axis");
    if (!(h > 0.0) || !std::isfinite(h)) throw Error("grid spacing must be positive");
    if (inside_.size() != size()) throw Error("mask size does not match grid");
    for (auto& b : inside_) b = b ? 1 : 0;
    node_count_ = static_cast<std::size_t>(std::count(inside_.begin(), inside_.end(), 1));
    if (node_count_ == 0) throw Error("empty domain");
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double h() const { return h_; }
  Point origin() const { return origin_; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }
  std::size_t node_count() const { return node_count_; }

  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(i);
  }
  int col(std::size_t idx) const { return static_cast<int>(idx % static_cast<std::size_t>(nx_)); }
  int row(std::size_t idx) const { return static_cast<int>(idx / static_cast<std::size_t>(nx_)); }
  Point point(int i, int j) const { return {origin_.x + h_ * i, origin_.y + h_ * j}; }
  Point point(std::size_t idx) const { return point(col(idx), row(idx)); }

  bool contains(std::size_t idx) const { return inside_[idx] != 0; }
  bool contains(int i, int j) const {
    return i >= 0 && j >= 0 && i < nx_ && j < ny_ && inside_[index(i, j)] != 0;
  }
  const std::vector<std::uint8_t>& inside() const { return inside_; }

  /// Nearest lattice node to a physical point, or nullopt-like -1 when the
  /// point falls outside the lattice frame.
  std::ptrdiff_t nearest_node(Point p) const {
    const long i = std::lround((p.x - origin_.x) / h_);
    const long j = std::lround((p.y - origin_.y) / h_);
    if (i < 0 || j < 0 || i >= nx_ || j >= ny_) return -1;
    return static_cast<std::ptrdiff_t>(index(static_cast<int>(i), static_cast<int>(j)));
  }

 private:
  int nx_;
  int ny_;
  double h_;
  Point origin_;
  std::vector<std::uint8_t> inside_;
  std::size_t node_count_ = 0;
};

using DomainPtr = std::shared_ptr<const GridDomain>;

/// Subset of the domain mask.
class Mask {
 public:
  explicit Mask(DomainPtr domain) : domain_(std::move(domain)), bits_(domain_->size(), 0) {}

  Mask(DomainPtr domain, std::vector<std::uint8_t> bits) : domain_(std::move(domain)), bits_(std::move(bits)) {
    if (bits_.size() != domain_->size()) throw Error("mask size does not match grid");
    for (std::size_t k = 0; k < bits_.size(); ++k) {
      bits_[k] = bits_[k] ? 1 : 0;
      if (bits_[k] && !domain_->contains(k)) throw Error("mask node outside the domain");
    }
  }

  static Mask whole(const DomainPtr& domain) { return Mask(domain, domain->inside()); }

  const DomainPtr& domain() const { return domain_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  bool operator[](std::size_t idx) const { return bits_[idx] != 0; }
  void set(std::size_t idx, bool on) {
    if (on && !domain_->contains(idx)) throw Error("mask node outside the domain");
    bits_[idx] = on ? 1 : 0;
  }

  std::size_t count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }
  bool empty() const { return std::find(bits_.begin(), bits_.end(), 1) == bits_.end(); }

  Mask& operator|=(const Mask& o) {
    for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] |= o.bits_[k];
    return *this;
  }
  Mask& operator&=(const Mask& o) {
    for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] &= o.bits_[k];
    return *this;
  }
  /// this \ o
  Mask& subtract(const Mask& o) {
    for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] = bits_[k] && !o.bits_[k];
    return *this;
  }
  bool subset_of(const Mask& o) const {
    for (std::size_t k = 0; k < bits_.size(); ++k)
      if (bits_[k] && !o.bits_[k]) return false;
    return true;
  }
  friend bool operator==(const Mask& a, const Mask& b) { return a.bits_ == b.bits_; }

 private:
  DomainPtr domain_;
  std::vector<std::uint8_t> bits_;
};

/// One real value per lattice node; exactly zero off the domain mask.
class ScalarField {
 public:
  explicit ScalarField(DomainPtr domain) : domain_(std::move(domain)), values_(domain_->size(), 0.0) {}

  ScalarField(DomainPtr domain, std::vector<double> values) : domain_(std::move(domain)), values_(std::move(values)) {
    if (values_.size() != domain_->size()) throw Error("field size does not match grid");
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (!domain_->contains(k)) {
        values_[k] = 0.0;
      } else if (!std::isfinite(values_[k])) {
        throw Error("non-finite field value");
      }
    }
  }

  template <class F>
  static ScalarField sample(const DomainPtr& domain, F&& f) {
    std::vector<double> v(domain->size(), 0.0);
    for (std::size_t k = 0; k < v.size(); ++k)
      if (domain->contains(k)) v[k] = f(domain->point(k));
    return ScalarField(domain, std::move(v));
  }

  const DomainPtr& domain() const { return domain_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t idx) const { return values_[idx]; }
  double at(int i, int j) const {
    if (i < 0 || j < 0 || i >= domain_->nx() || j >= domain_->ny()) return 0.0;
    return values_[domain_->index(i, j)];
  }

  double max() const { return *std::max_element(values_.begin(), values_.end()); }

 private:
  DomainPtr domain_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Domain construction

enum class ShapeKind { disk, rectangle, square, l_shape, disk_minus_ball };

/// disk(R): a = R.  rectangle(a, b).  square(a).  l_shape(a): [0,a]^2 minus
/// the upper-right quadrant [a/2,a]^2.  disk_minus_ball(R, r0): B_R(0) minus
/// the closed ball of radius r0 centred at (-r0, 0), tangent at the origin.
struct Shape {
  ShapeKind kind = ShapeKind::square;
  double a = 1.0;
  double b = 0.0;

  static Shape disk(double R) { return {ShapeKind::disk, R, 0.0}; }
  static Shape rectangle(double a, double b) { return {ShapeKind::rectangle, a, b}; }
  static Shape square(double a) { return {ShapeKind::square, a, 0.0}; }
  static Shape l_shape(double a) { return {ShapeKind::l_shape, a, 0.0}; }
  static Shape disk_minus_ball(double R, double r0) { return {ShapeKind::disk_minus_ball, R, r0}; }
};

inline DomainPtr build_domain(const Shape& shape, int n) {
  if (n < 2) throw Error("resolution n must be at least 2");
  auto check = [](double v) {
    if (v == 0.0) throw Error("empty domain");
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("shape parameters must be positive");
  };
  check(shape.a);
  if (shape.kind == ShapeKind::rectangle || shape.kind == ShapeKind::disk_minus_ball) check(shape.b);

  double extent = shape.a;
  double wx = shape.a, wy = shape.a;
  Point origin{0.0, 0.0};
  switch (shape.kind) {
    case ShapeKind::rectangle:
      extent = std::min(shape.a, shape.b);
      wx = shape.a;
      wy = shape.b;
      break;
    case ShapeKind::disk:
    case ShapeKind::disk_minus_ball:
      if (shape.kind == ShapeKind::disk_minus_ball && !(shape.b < shape.a))
        throw Error("disk_minus_ball needs r0 < R");
      extent = wx = wy = 2.0 * shape.a;
      origin = {-shape.a, -shape.a};
      break;
    default:
      break;
  }
  const double h = extent / n;
  const int nx = static_cast<int>(std::floor(wx / h + 1e-9)) + 1;
  const int ny = static_cast<int>(std::floor(wy / h + 1e-9)) + 1;
  const double eps = 1e-9 * h;

  auto inside = [&](double x, double y) {
    switch (shape.kind) {
      case ShapeKind::disk:
        return x * x + y * y < shape.a * shape.a - eps * shape.a;
      case ShapeKind::disk_minus_ball: {
        const double R = shape.a, r0 = shape.b;
        return x * x + y * y < R * R - eps * R && (x + r0) * (x + r0) + y * y > r0 * r0 + eps * r0;
      }
      case ShapeKind::l_shape:
        return x > eps && y > eps && x < shape.a - eps && y < shape.a - eps &&
               !(x > 0.5 * shape.a - eps && y > 0.5 * shape.a - eps);
      default:
        return x > eps && y > eps && x < wx - eps && y < wy - eps;
    }
  };

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), 0);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      mask[static_cast<std::size_t>(j) * nx + i] = inside(origin.x + h * i, origin.y + h * j) ? 1 : 0;
  if (std::find(mask.begin(), mask.end(), 1) == mask.end()) throw Error("empty domain");
  return std::make_shared<const GridDomain>(nx, ny, h, origin, std::move(mask));
}

/// Domain whose mask covers the whole lattice.
inline DomainPtr lattice_domain(int nx, int ny, double h, Point origin = {}) {
  return std::make_shared<const GridDomain>(nx, ny, h, origin,
                                            std::vector<std::uint8_t>(static_cast<std::size_t>(nx) * ny, 1));
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform

namespace detail {

inline constexpr double kFar = 1e30;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), squared distances.
inline void edt_1d(const double* f, double* d, int n, std::ptrdiff_t stride_f, std::ptrdiff_t stride_d,
                   std::vector<int>& v, std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride_f];
    if (fq >= kFar) continue;
    while (k >= 0) {
      const int p = v[k];
      const double s = ((fq + double(q) * q) - (f[p * stride_f] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -std::numeric_limits<double>::infinity()
                  : ((fq + double(q) * q) - (f[v[k - 1] * stride_f] + double(v[k - 1]) * v[k - 1])) /
                        (2.0 * (q - v[k - 1]));
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q * stride_d] = kFar;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q * stride_d] = dq * dq + f[v[j] * stride_f];
  }
}

}  // namespace detail

/// Squared distance, in lattice units, from every lattice node to the nearest
/// seed node. Nodes are unreachable (kFar) only when there are no seeds.
inline std::vector<double> squared_lattice_distance(int nx, int ny, const std::vector<std::uint8_t>& seeds) {
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  std::vector<double> f(n), g(n);
  for (std::size_t k = 0; k < n; ++k) f[k] = seeds[k] ? 0.0 : detail::kFar;
  std::vector<int> v;
  std::vector<double> z;
  for (int i = 0; i < nx; ++i) detail::edt_1d(f.data() + i, g.data() + i, ny, nx, nx, v, z);
  for (int j = 0; j < ny; ++j)
    detail::edt_1d(g.data() + static_cast<std::size_t>(j) * nx, f.data() + static_cast<std::size_t>(j) * nx, nx, 1, 1,
                   v, z);
  return f;
}

/// Physical distance from every lattice node (on or off the domain) to m.
inline std::vector<double> lattice_distance(const Mask& m) {
  if (m.empty()) throw Error("distance transform of an empty mask");
  const auto& d = *m.domain();
  auto sq = squared_lattice_distance(d.nx(), d.ny(), m.bits());
  for (auto& s : sq) s = std::sqrt(s) * d.h();
  return sq;
}

inline ScalarField distance_transform(const Mask& m) { return ScalarField(m.domain(), lattice_distance(m)); }

namespace detail {
// Radius comparisons happen in squared lattice units, where node-to-node
// distances are exact integers.
inline double lattice_radius_sq(double r, double h) {
  const double s = r / h;
  return s * s * (1.0 + 1e-12) + 1e-9;
}
}  // namespace detail

/// Domain nodes within Euclidean distance r of m (m itself when r = 0).
inline Mask dilate(const Mask& m, double r) {
  if (!(r >= 0.0)) throw Error("dilation radius must be nonnegative");
  if (m.empty()) return m;
  const auto& d = *m.domain();
  const auto sq = squared_lattice_distance(d.nx(), d.ny(), m.bits());
  const double lim = detail::lattice_radius_sq(r, d.h());
  std::vector<std::uint8_t> out(d.size(), 0);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = d.contains(k) && sq[k] <= lim;
  return Mask(m.domain(), std::move(out));
}

/// Nodes of m whose distance to every lattice node outside m exceeds r.
inline Mask erode(const Mask& m, double r) {
  if (!(r >= 0.0)) throw Error("erosion radius must be nonnegative");
  const auto& d = *m.domain();
  std::vector<std::uint8_t> comp(d.size());
  for (std::size_t k = 0; k < comp.size(); ++k) comp[k] = m[k] ? 0 : 1;
  if (std::find(comp.begin(), comp.end(), 1) == comp.end()) return m;
  const auto sq = squared_lattice_distance(d.nx(), d.ny(), comp);
  const double lim = detail::lattice_radius_sq(r, d.h());
  std::vector<std::uint8_t> out(d.size(), 0);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = m[k] && sq[k] > lim;
  return Mask(m.domain(), std::move(out));
}

/// Smallest node-to-node distance between two masks (physical units).
inline double set_distance(const Mask& a, const Mask& b) {
  if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
  const auto& d = *a.domain();
  const auto sq = squared_lattice_distance(d.nx(), d.ny(), b.bits());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < sq.size(); ++k)
    if (a[k]) best = std::min(best, sq[k]);
  return std::sqrt(best) * d.h();
}

// ---------------------------------------------------------------------------
// Differential operators and norms

/// Centered differences where both axis neighbours lie in the domain,
/// one-sided where only one does, zero where neither does.
inline std::pair<ScalarField, ScalarField> discrete_gradient(const ScalarField& f) {
  const auto& d = *f.domain();
  const double h = d.h();
  std::vector<double> gx(d.size(), 0.0), gy(d.size(), 0.0);
  for (int j = 0; j < d.ny(); ++j) {
    for (int i = 0; i < d.nx(); ++i) {
      const std::size_t k = d.index(i, j);
      if (!d.contains(k)) continue;
      const double c = f[k];
      const bool l = d.contains(i - 1, j), r = d.contains(i + 1, j);
      const bool b = d.contains(i, j - 1), t = d.contains(i, j + 1);
      if (l && r) {
        gx[k] = (f.at(i + 1, j) - f.at(i - 1, j)) / (2.0 * h);
      } else if (r) {
        gx[k] = (f.at(i + 1, j) - c) / h;
      } else if (l) {
        gx[k] = (c - f.at(i - 1, j)) / h;
      }
      if (b && t) {
        gy[k] = (f.at(i, j + 1) - f.at(i, j - 1)) / (2.0 * h);
      } else if (t) {
        gy[k] = (f.at(i, j + 1) - c) / h;
      } else if (b) {
        gy[k] = (c - f.at(i, j - 1)) / h;
      }
    }
  }
  return {ScalarField(f.domain(), std::move(gx)), ScalarField(f.domain(), std::move(gy))};
}

/// |grad f|^2 per node.
inline std::vector<double> gradient_norm_sq(const ScalarField& f) {
  const auto [gx, gy] = discrete_gradient(f);
  std::vector<double> out(gx.values().size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = gx[k] * gx[k] + gy[k] * gy[k];
  return out;
}

/// Sum over lattice edges of squared jumps, with the field extended by zero
/// outside the lattice: equals <f, -Delta_h f> h^2, i.e. the discrete
/// Dirichlet integral of the zero-extended field.
inline double dirichlet_energy(const ScalarField& f) {
  const auto& d = *f.domain();
  double e = 0.0;
  for (int j = 0; j < d.ny(); ++j) {
    for (int i = 0; i < d.nx(); ++i) {
      const double c = f.at(i, j);
      const double dr = f.at(i + 1, j) - c;
      const double du = f.at(i, j + 1) - c;
      e += dr * dr + du * du;
      if (i == 0) e += c * c;
      if (j == 0) e += c * c;
    }
  }
  return e;
}

inline double l2_norm_sq(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values()) s += v * v;
  const double h = f.domain()->h();
  return s * h * h;
}

inline double rayleigh_quotient(const ScalarField& f) {
  const double m = l2_norm_sq(f);
  if (!(m > 0.0)) throw Error("Rayleigh quotient of a zero field");
  return dirichlet_energy(f) / m;
}

/// max |f(x)-f(y)|/|x-y|^alpha over node pairs of the domain: exhaustive up
/// to 64x64 lattices, otherwise over a fixed-seed sample of 10^6 pairs.
inline double holder_seminorm(const ScalarField& f, double alpha, std::uint64_t seed = 0x5eed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("Hoelder exponent must lie in (0,1)");
  const auto& d = *f.domain();
  std::vector<std::size_t> nodes;
  nodes.reserve(d.node_count());
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d.contains(k)) nodes.push_back(k);
  auto quotient = [&](std::size_t a, std::size_t b) {
    const double dist = distance(d.point(a), d.point(b));
    return std::abs(f[a] - f[b]) / std::pow(dist, alpha);
  };
  double best = 0.0;
  if (d.size() <= 64u * 64u) {
    for (std::size_t p = 0; p < nodes.size(); ++p)
      for (std::size_t q = p + 1; q < nodes.size(); ++q) best = std::max(best, quotient(nodes[p], nodes[q]));
    return best;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
  for (int s = 0; s < 1000000; ++s) {
    const std::size_t a = nodes[pick(rng)], b = nodes[pick(rng)];
    if (a != b) best = std::max(best, quotient(a, b));
  }
  return best;
}

struct Norms {
  double l2 = 0.0;
  double linf = 0.0;
  double h1_seminorm = 0.0;
  double lip = 0.0;
  double holder = 0.0;
  double alpha = 0.5;
};

inline Norms norms(const ScalarField& f, double alpha = 0.5) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("Hoelder exponent must lie in (0,1)");
  Norms out;
  out.alpha = alpha;
  out.l2 = std::sqrt(l2_norm_sq(f));
  for (double v : f.values()) out.linf = std::max(out.linf, std::abs(v));
  out.h1_seminorm = std::sqrt(dirichlet_energy(f));
  const auto g2 = gradient_norm_sq(f);
  for (std::size_t k = 0; k < g2.size(); ++k)
    if (f.domain()->contains(k)) out.lip = std::max(out.lip, std::sqrt(g2[k]));
  out.holder = holder_seminorm(f, alpha);
  return out;
}

// ---------------------------------------------------------------------------
// Ball quadrature

/// Integral over B_r(c) of a nodal density (cell-centred rule). Cells cut by
/// the circle are weighted by their covered fraction, estimated on an 8x8
/// sub-grid; this keeps the integral continuous in r.
template <class Density>
double ball_integral(const GridDomain& d, Point c, double r, Density&& density) {
  constexpr int kSub = 8;
  const double h = d.h();
  const double reach = r + h;
  const int i0 = std::max(0, static_cast<int>(std::floor((c.x - reach - d.origin().x) / h)));
  const int i1 = std::min(d.nx() - 1, static_cast<int>(std::ceil((c.x + reach - d.origin().x) / h)));
  const int j0 = std::max(0, static_cast<int>(std::floor((c.y - reach - d.origin().y) / h)));
  const int j1 = std::min(d.ny() - 1, static_cast<int>(std::ceil((c.y + reach - d.origin().y) / h)));
  const double half_diag = h * std::sqrt(0.5);
  double total = 0.0;
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) {
      const std::size_t k = d.index(i, j);
      const Point p = d.point(i, j);
      const double rho = distance(p, c);
      if (rho >= r + half_diag) continue;
      double frac = 1.0;
      if (rho > r - half_diag) {
        int hits = 0;
        for (int a = 0; a < kSub; ++a)
          for (int b = 0; b < kSub; ++b) {
            const double sx = p.x + h * ((a + 0.5) / kSub - 0.5);
            const double sy = p.y + h * ((b + 0.5) / kSub - 0.5);
            if ((sx - c.x) * (sx - c.x) + (sy - c.y) * (sy - c.y) < r * r) ++hits;
          }
        frac = static_cast<double>(hits) / (kSub * kSub);
      }
      if (frac > 0.0) total += frac * density(k);
    }
  }
  return total * h * h;
}

}  // namespace segpart
