// Config-driven commands behind the segpart executable: eig, partition,
// sweep and verify. Each command returns its process exit code.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "segpart/eigensolve.hpp"
#include "segpart/grid.hpp"
#include "segpart/io.hpp"
#include "segpart/monotonicity.hpp"
#include "segpart/partition.hpp"

namespace segpart::cli {

enum Exit : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kSolverError = 3 };

class ConfigError : public Error {
 public:
  using Error::Error;
};

using Json = nlohmann::json;

struct RunConfig {
  Json raw;
  Shape shape;
  int n = 64;
  int k = 2;
  double r = 0.0;
  std::vector<double> r_values;
  std::uint64_t seed = 1;
  double tau = 1e-3;
  int max_outer = 200;
  int lloyd_iterations = 25;
  bool exchange = true;
  std::vector<Point> sites;
  double tol_eig = 1e-8;
  double tol_outer = 1e-6;
  std::filesystem::path out_dir;
  std::vector<std::string> checks;
  Json verify = Json::object();
};

namespace detail {

inline void expect_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
T get(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

inline double param(const Json& params, const char* key) {
  if (!params.contains(key)) throw ConfigError(std::string("domain.params needs '") + key + "'");
  if (!params.at(key).is_number()) throw ConfigError(std::string("domain.params.") + key + " must be a number");
  return params.at(key).get<double>();
}

inline Shape parse_shape(const Json& dom) {
  expect_keys(dom, "domain", {"shape", "params"});
  const auto shape = get<std::string>(dom, "shape", "", "domain");
  const Json params = dom.contains("params") ? dom.at("params") : Json::object();
  if (shape == "disk") {
    expect_keys(params, "domain.params", {"R"});
    return Shape::disk(param(params, "R"));
  }
  if (shape == "rectangle") {
    expect_keys(params, "domain.params", {"a", "b"});
    return Shape::rectangle(param(params, "a"), param(params, "b"));
  }
  if (shape == "square") {
    expect_keys(params, "domain.params", {"a"});
    return Shape::square(param(params, "a"));
  }
  if (shape == "l_shape") {
    expect_keys(params, "domain.params", {"a"});
    return Shape::l_shape(param(params, "a"));
  }
  if (shape == "disk_minus_ball") {
    expect_keys(params, "domain.params", {"R", "r0"});
    return Shape::disk_minus_ball(param(params, "R"), param(params, "r0"));
  }
  throw ConfigError("unknown domain shape '" + shape + "'");
}

}  // namespace detail

/// Parses and validates a config document. Relative output.dir values are
/// resolved against base_dir (the directory holding the config file).
inline RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir) {
  using detail::expect_keys;
  using detail::get;
  expect_keys(j, "config",
              {"schema", "domain", "grid", "problem", "tolerances", "output", "checks", "verify"});
  if (!j.contains("schema") || !j.at("schema").is_number_integer() || j.at("schema").get<int>() != 1)
    throw ConfigError("config needs \"schema\": 1");
  RunConfig c;
  c.raw = j;
  c.shape = j.contains("domain") ? detail::parse_shape(j.at("domain")) : Shape::square(1.0);
  if (j.contains("grid")) {
    expect_keys(j.at("grid"), "grid", {"n"});
    c.n = get<int>(j.at("grid"), "n", c.n, "grid");
  }
  if (j.contains("problem")) {
    const auto& p = j.at("problem");
    expect_keys(p, "problem",
                {"k", "r", "r_values", "seed", "tau", "max_outer", "sites", "lloyd_iterations", "exchange"});
    c.k = get<int>(p, "k", c.k, "problem");
    c.r = get<double>(p, "r", c.r, "problem");
    c.r_values = get<std::vector<double>>(p, "r_values", {}, "problem");
    c.seed = get<std::uint64_t>(p, "seed", c.seed, "problem");
    c.tau = get<double>(p, "tau", c.tau, "problem");
    c.max_outer = get<int>(p, "max_outer", c.max_outer, "problem");
    c.lloyd_iterations = get<int>(p, "lloyd_iterations", c.lloyd_iterations, "problem");
    c.exchange = get<bool>(p, "exchange", c.exchange, "problem");
    for (const auto& s : get<std::vector<std::vector<double>>>(p, "sites", {}, "problem")) {
      if (s.size() != 2) throw ConfigError("problem.sites entries must be [x, y]");
      c.sites.push_back({s[0], s[1]});
    }
  }
  if (j.contains("tolerances")) {
    expect_keys(j.at("tolerances"), "tolerances", {"eig", "outer"});
    c.tol_eig = get<double>(j.at("tolerances"), "eig", c.tol_eig, "tolerances");
    c.tol_outer = get<double>(j.at("tolerances"), "outer", c.tol_outer, "tolerances");
  }
  std::filesystem::path out = "out";
  if (j.contains("output")) {
    expect_keys(j.at("output"), "output", {"dir"});
    out = get<std::string>(j.at("output"), "dir", "out", "output");
  }
  c.out_dir = out.is_absolute() ? out : base_dir / out;
  c.checks = get<std::vector<std::string>>(j, "checks", {}, "config");
  if (j.contains("verify")) {
    c.verify = j.at("verify");
    expect_keys(c.verify, "verify",
                {"cap", "gamma", "psi", "mean_value", "acf", "cjk", "poincare", "gradient_location"});
  }
  if (c.n < 8) throw ConfigError("grid.n must be at least 8");
  if (!(c.tol_eig > 0.0) || !(c.tol_outer > 0.0)) throw ConfigError("tolerances must be positive");
  if (c.k < 1) throw ConfigError("problem.k must be at least 1");
  if (!(c.r >= 0.0)) throw ConfigError("problem.r must be nonnegative");
  if (!(c.tau >= 0.0 && c.tau <= 0.1)) throw ConfigError("problem.tau must lie in [0, 0.1]");
  if (c.max_outer < 1) throw ConfigError("problem.max_outer must be at least 1");
  if (!c.sites.empty() && static_cast<int>(c.sites.size()) != c.k) throw ConfigError("problem.sites needs k entries");
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j, path.parent_path());
}

/// Shape errors ("empty domain", bad parameters) are configuration errors.
inline DomainPtr make_domain(const Shape& s, int n) {
  try {
    return build_domain(s, n);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

inline PartitionProblem make_problem(const RunConfig& c, DomainPtr domain) {
  PartitionProblem p;
  p.domain = std::move(domain);
  p.k = c.k;
  p.r = c.r;
  p.seed = c.seed;
  p.tol_outer = c.tol_outer;
  p.tol_eig = c.tol_eig;
  p.max_outer = c.max_outer;
  p.tau = c.tau;
  p.sites = c.sites;
  p.lloyd_iterations = c.lloyd_iterations;
  p.exchange = c.exchange;
  return p;
}

/// Timestamped run log kept next to the outputs; the only file that differs
/// between identical runs.
class Log {
 public:
  Log(const std::filesystem::path& dir, bool verbose, std::ostream& err) : verbose_(verbose), err_(err) {
    std::filesystem::create_directories(dir);
    file_.open(dir / "segpart.log", std::ios::app);
  }
  void operator()(const std::string& msg) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    if (file_) file_ << stamp << " " << msg << "\n";
    if (verbose_) err_ << msg << "\n";
  }

 private:
  bool verbose_;
  std::ostream& err_;
  std::ofstream file_;
};

inline int worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SEGPART_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// eig

inline int cmd_eig(const RunConfig& c, bool verbose, std::ostream& out, std::ostream& err) {
  DomainPtr d = make_domain(c.shape, c.n);
  Log log(c.out_dir, verbose, err);
  log("eig: " + std::to_string(d->node_count()) + " unknowns, h=" + io::format_double(d->h()));
  EigenOptions opts;
  opts.tol = c.tol_eig;
  const auto e = first_dirichlet_eig(Mask::whole(d), opts);
  io::write_spf1(c.out_dir / "eig.spf1", e.field);
  nlohmann::ordered_json side;
  side["lambda"] = e.lambda;
  side["residual"] = e.residual;
  side["iterations"] = e.iterations;
  io::atomic_write(c.out_dir / "eig.json", side.dump(2) + "\n");
  log("eig: done after " + std::to_string(e.iterations) + " iterations");
  out << "lambda1=" << io::format_double(e.lambda) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// partition

inline int cmd_partition(const RunConfig& c, bool verbose, std::ostream& out, std::ostream& err) {
  const auto p = make_problem(c, make_domain(c.shape, c.n));
  Log log(c.out_dir, verbose, err);
  log("partition: k=" + std::to_string(p.k) + " r=" + io::format_double(p.r));
  const auto s = optimize(p);
  save_state(c.out_dir, s, p);
  log("partition: " + std::to_string(s.outer_iterations) + " passes, converged=" + (s.converged ? "yes" : "no"));
  out << "c=" << io::format_double(s.c) << "\n";
  for (int i = 0; i < s.k(); ++i)
    out << "lambda_" << i + 1 << "=" << io::format_double(s.lambdas[static_cast<std::size_t>(i)]) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep

inline int cmd_sweep(const RunConfig& c, bool verbose, std::ostream& out, std::ostream& err) {
  auto rs = c.r_values;
  if (rs.empty()) throw ConfigError("sweep needs problem.r_values");
  std::sort(rs.begin(), rs.end(), std::greater<>());
  if (std::adjacent_find(rs.begin(), rs.end()) != rs.end()) throw ConfigError("problem.r_values has duplicates");
  if (rs.back() != 0.0) throw ConfigError("problem.r_values must include 0");
  if (rs.back() < 0.0) throw ConfigError("problem.r_values must be nonnegative");
  const auto p = make_problem(c, make_domain(c.shape, c.n));
  Log log(c.out_dir, verbose, err);
  log("sweep: " + std::to_string(rs.size()) + " values of r");
  const auto rep = run_sweep(p, rs);
  io::atomic_write(c.out_dir / "sweep.csv", sweep_csv(rep));
  const auto summary = sweep_json(rep);
  io::atomic_write(c.out_dir / "sweep.json", summary.dump(2) + "\n");
  std::size_t ok = 0;
  for (const auto& row : rep.rows) {
    ok += row.ok;
    if (row.ok) {
      out << "r=" << io::format_double(row.r) << " c=" << io::format_double(row.c) << "\n";
    } else {
      out << "r=" << io::format_double(row.r) << " failed: " << row.error << "\n";
      log("sweep: r=" + io::format_double(row.r) + " failed: " + row.error);
    }
  }
  if (summary.contains("slope")) out << "slope=" << io::format_double(summary["slope"].get<double>()) << "\n";
  return 5 * ok >= 4 * rep.rows.size() ? kOk : kSolverError;
}

// ---------------------------------------------------------------------------
// verify

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string csv;
  nlohmann::ordered_json summary;
  std::vector<std::string> lines;
};

namespace detail {

inline std::vector<double> arange(double start, double stop, double step) {
  std::vector<double> v;
  for (int m = 0;; ++m) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", start + m * step);
    const double x = std::strtod(buf, nullptr);
    if (x > stop + 1e-12 * std::max(1.0, std::abs(stop))) break;
    v.push_back(x);
  }
  return v;
}

inline Json section(const RunConfig& c, const char* name) {
  return c.verify.contains(name) ? c.verify.at(name) : Json::object();
}

inline CheckOutcome check_cap(const RunConfig& c) {
  const Json s = section(c, "cap");
  expect_keys(s, "verify.cap", {"N", "r_values", "nodes"});
  const auto Ns = get<std::vector<int>>(s, "N", {3, 4, 5}, "verify.cap");
  const auto rs = get<std::vector<double>>(s, "r_values", arange(0.0, 0.5, 0.05), "verify.cap");
  const int nodes = get<int>(s, "nodes", 4096, "verify.cap");
  if (rs.empty() || rs.front() != 0.0) throw ConfigError("verify.cap.r_values must start at 0");
  CheckOutcome o{"cap", true, "N,r,lambda\n", {}, {}};
  for (int N : Ns) {
    if (N < 2) throw ConfigError("verify.cap.N entries must be at least 2");
    std::vector<double> lam;
    for (double r : rs) {
      lam.push_back(cap_eigenvalue(N, r, nodes).lambda1);
      o.csv += std::to_string(N) + "," + io::format_double(r) + "," + io::format_double(lam.back()) + "\n";
      o.lines.push_back("cap N=" + std::to_string(N) + " r=" + io::format_double(r) + " lambda=" + fixed6(lam.back()));
    }
    const double slope = (cap_eigenvalue(N, 0.01, nodes).lambda1 - lam.front()) / 0.01;
    bool mono = true;
    for (std::size_t q = 1; q < lam.size(); ++q) mono = mono && lam[q] <= lam[q - 1];
    const double err0 = std::abs(lam.front() - (N - 1));
    const bool pass = err0 <= 1e-6 && mono && slope < 0.0;
    o.passed = o.passed && pass;
    o.summary["N=" + std::to_string(N)] = {
        {"lambda0_error", err0}, {"nonincreasing", mono}, {"slope_at_0", slope}, {"passed", pass}};
  }
  return o;
}

inline CheckOutcome check_gamma(const RunConfig& c) {
  const Json s = section(c, "gamma");
  expect_keys(s, "verify.gamma", {"N", "points"});
  const int N = get<int>(s, "N", 3, "verify.gamma");
  const int pts = get<int>(s, "points", 1000, "verify.gamma");
  if (N < 2 || pts < 4 || pts % 2) throw ConfigError("verify.gamma needs N >= 2 and an even point count");
  CheckOutcome o{"gamma", true, "t,gamma,dgamma\n", {}, {}};
  const double T = 2.0 * (N - 1);
  std::vector<double> g;
  for (int q = 0; q <= pts; ++q) {
    const double t = T * q / pts;
    g.push_back(gamma_fun(N, t));
    o.csv += io::format_double(t) + "," + io::format_double(g.back()) + "," +
             io::format_double(gamma_derivative(N, t)) + "\n";
  }
  double worst_second = -1e300, worst_first = 1e300;
  for (std::size_t q = 1; q + 1 < g.size(); ++q) worst_second = std::max(worst_second, g[q + 1] - 2 * g[q] + g[q - 1]);
  for (std::size_t q = 1; q < g.size(); ++q) worst_first = std::min(worst_first, g[q] - g[q - 1]);
  const double at = gamma_fun(N, N - 1.0), dat = gamma_derivative(N, N - 1.0);
  o.passed = std::abs(at - 1.0) <= 1e-12 && std::abs(dat - 1.0 / N) <= 1e-6 && worst_second <= 1e-14 &&
             worst_first > 0.0;
  o.summary = {{"N", N},
               {"gamma_at_N_minus_1", at},
               {"dgamma_at_N_minus_1", dat},
               {"max_second_difference", worst_second},
               {"min_first_difference", worst_first}};
  o.lines.push_back("gamma N=" + std::to_string(N) + " t=" + std::to_string(N - 1) + " gamma=" + fixed6(at) +
                    " dgamma=" + fixed6(dat));
  return o;
}

inline CheckOutcome check_psi(const RunConfig& c) {
  const Json s = section(c, "psi");
  expect_keys(s, "verify.psi", {"N", "R_bar", "samples"});
  const int N = get<int>(s, "N", 3, "verify.psi");
  const double R = get<double>(s, "R_bar", 1.0, "verify.psi");
  const int samples = get<int>(s, "samples", 1024, "verify.psi");
  if (N < 3) throw ConfigError("verify.psi.N must be at least 3");
  const auto p = build_radial_profile(N, R, samples);
  const auto q = build_radial_profile(N, R, 2 * samples);
  const double C1 = fit_psi_constant(p), C2 = fit_psi_constant(q);
  const double change = std::abs(C2 - C1) / C1;
  CheckOutcome o{"psi", false, "s,phi,gamma_phi,psi\n", {}, {}};
  for (std::size_t k = 0; k < p.s.size(); ++k)
    o.csv += io::format_double(p.s[k]) + "," + io::format_double(p.phi[k]) + "," +
             io::format_double(p.gamma_phi[k]) + "," + io::format_double(p.psi[k]) + "\n";
  const double gend = p.gamma_phi.back();
  o.passed = std::isfinite(C1) && change <= 0.1 && std::abs(p.psi.front() - 1.0) <= 1e-8 && std::abs(gend) <= 1e-8;
  o.summary = {{"N", N},          {"R_bar", R},          {"lambda_bar", p.lambda_bar}, {"fitted_C", C1},
               {"fitted_C_doubled", C2}, {"relative_change", change}, {"psi_0", p.psi.front()},
               {"gamma_phi_end", gend}};
  o.lines.push_back("psi(0)=" + fixed6(p.psi.front()) + " C=" + fixed6(C1) + " C(2x)=" + fixed6(C2));
  return o;
}

inline std::string tagged_csv(const std::vector<std::pair<std::string, const MonotonicityReport*>>& parts) {
  std::string out;
  for (const auto& [tag, rep] : parts) {
    std::string body = report_csv(*rep);
    const auto eol = body.find('\n');
    if (out.empty()) out = "field," + body.substr(0, eol + 1);
    std::size_t pos = eol + 1;
    while (pos < body.size()) {
      const auto next = body.find('\n', pos);
      out += tag + "," + body.substr(pos, next - pos + 1);
      pos = next + 1;
    }
  }
  return out;
}

inline CheckOutcome check_mean_value(const RunConfig& c) {
  const Json s = section(c, "mean_value");
  expect_keys(s, "verify.mean_value", {"R", "step", "slack"});
  const double R = get<double>(s, "R", 1.0, "verify.mean_value");
  const double step = get<double>(s, "step", 0.05, "verify.mean_value");
  const double slack = get<double>(s, "slack", 0.01, "verify.mean_value");
  const auto d = make_domain(Shape::disk(R), c.n);
  EigenOptions opts;
  opts.tol = c.tol_eig;
  const auto e = first_dirichlet_eig(Mask::whole(d), opts);
  const auto radii_u = arange(step * R, 0.9 * R, step * R);
  const auto rep_u = mean_value_check(e.field, e.lambda, {0.0, 0.0}, radii_u);
  const ScalarField v(d, gradient_norm_sq(e.field));
  const double lim = std::min(0.9 * R, 0.95 * 2.0 * ball_radius_for_eigenvalue(2, 2.0 * e.lambda));
  const auto rep_g = mean_value_check(v, 2.0 * e.lambda, {0.0, 0.0}, arange(step * R, lim, step * R));
  CheckOutcome o{"mean_value", rep_u.max_violation <= slack && rep_g.max_violation <= slack,
                 tagged_csv({{"u", &rep_u}, {"grad_sq", &rep_g}}), {}, {}};
  o.summary = {{"eigenfunction", report_json(rep_u)}, {"gradient_squared", report_json(rep_g)}, {"slack", slack}};
  o.lines.push_back("mean_value u max_violation=" + fixed6(rep_u.max_violation) +
                    " grad_sq max_violation=" + fixed6(rep_g.max_violation));
  return o;
}

inline CheckOutcome check_acf(const RunConfig& c) {
  const Json s = section(c, "acf");
  expect_keys(s, "verify.acf", {"R", "r0", "r_max", "tolerance", "sandwich_bound"});
  const double R = get<double>(s, "R", 2.0, "verify.acf");
  const double r0 = get<double>(s, "r0", 1.0, "verify.acf");
  const double rmax = get<double>(s, "r_max", 0.5, "verify.acf");
  const double tol = get<double>(s, "tolerance", 0.02, "verify.acf");
  const double bound = get<double>(s, "sandwich_bound", 1e3, "verify.acf");
  const auto d = make_domain(Shape::disk_minus_ball(R, r0), c.n);
  EigenOptions opts;
  opts.tol = c.tol_eig;
  const auto e = first_dirichlet_eig(Mask::whole(d), opts);
  const auto profile = build_radial_profile(2, ball_radius_for_eigenvalue(2, e.lambda), 1024);
  const double h = d->h();
  const auto rep = scan_psi_constant(e.field, profile, {0.0, 0.0}, arange(4.0 * h, rmax, h), tol, {0, 1, 2, 4, 8},
                                     ExteriorBall{{-r0, 0.0}, r0});
  const double lo = rep.constants.at("sandwich_lower"), hi = rep.constants.at("sandwich_upper");
  CheckOutcome o{"acf", rep.max_violation <= tol && lo < bound && hi < bound, report_csv(rep), report_json(rep), {}};
  o.summary["lambda"] = e.lambda;
  o.lines.push_back("acf C=" + fixed6(rep.constants.at("C")) + " max_violation=" + fixed6(rep.max_violation) +
                    " sandwich=" + fixed6(lo) + "," + fixed6(hi));
  return o;
}

inline CheckOutcome check_cjk(const RunConfig& c) {
  const Json s = section(c, "cjk");
  expect_keys(s, "verify.cjk", {"r_max", "ratio_bound", "spearman_min"});
  const double rmax = get<double>(s, "r_max", 0.25, "verify.cjk");
  const double bound = get<double>(s, "ratio_bound", 50.0, "verify.cjk");
  const double rho_min = get<double>(s, "spearman_min", -0.5, "verify.cjk");
  RunConfig local = c;
  local.k = 2;
  local.r = 0.0;
  local.sites.clear();
  const auto p = make_problem(local, make_domain(Shape::rectangle(2.0, 1.0), c.n));
  const auto st = optimize(p);
  const auto order = segpart::detail::canonical_order(st.supports);
  const Point x0 = free_boundary_point(st, order[0], order[1]);
  const double h = p.domain->h();
  const auto rep = cjk_product(st.fields[static_cast<std::size_t>(order[0])],
                               st.fields[static_cast<std::size_t>(order[1])], x0, arange(4.0 * h, rmax, h));
  const double ratio = rep.constants.at("max_over_min"), rho = rep.constants.at("spearman");
  CheckOutcome o{"cjk", ratio <= bound && rho >= rho_min, report_csv(rep), report_json(rep), {}};
  o.summary["center"] = {x0.x, x0.y};
  o.lines.push_back("cjk max_over_min=" + fixed6(ratio) + " spearman=" + fixed6(rho));
  return o;
}

inline CheckOutcome check_poincare(const RunConfig& c) {
  const Json s = section(c, "poincare");
  expect_keys(s, "verify.poincare", {"radii", "fields", "bound", "seed"});
  const auto radii = get<std::vector<double>>(s, "radii", {0.25, 0.5, 1.0}, "verify.poincare");
  const int count = get<int>(s, "fields", 100, "verify.poincare");
  const double bound = get<double>(s, "bound", 100.0, "verify.poincare");
  const auto seed = get<std::uint64_t>(s, "seed", 7, "verify.poincare");
  if (radii.empty() || count < 1) throw ConfigError("verify.poincare needs radii and fields >= 1");
  const double rmax = *std::max_element(radii.begin(), radii.end());
  const double extent = 2.0 * rmax + 0.25;
  const int nodes = static_cast<int>(std::lround(c.n * extent / (2.0 * rmax))) + 1;
  const double h = extent / (nodes - 1);
  const auto d = lattice_domain(nodes, nodes, h, {-0.5 * extent, -0.5 * extent});
  const ExteriorBall ball{{-1.0, 0.0}, 1.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  CheckOutcome o{"poincare", true, "r,field,ratio\n", {}, {}};
  double worst = 0.0;
  for (double r : radii) {
    for (int f = 0; f < count; ++f) {
      double a[6];
      for (double& x : a) x = coef(rng);
      const auto field = ScalarField::sample(d, [&](Point p) {
        const double gap = distance(p, ball.center) - ball.radius;
        if (gap <= 0.0) return 0.0;
        const double w = f == 0 ? 1.0 : 1.5 + a[0] + 0.5 * std::sin(3 * a[1] * p.x + 2 * a[2] * p.y) + a[3] * p.y;
        return gap * std::pow(std::max(w, 0.05), 1.0 + 0.5 * (a[4] + 1.0)) * (1.0 + 0.2 * a[5] * p.x);
      });
      const double q = poincare_check(field, {0.0, 0.0}, r, ball);
      worst = std::max(worst, q);
      o.passed = o.passed && std::isfinite(q) && q <= bound;
      o.csv += io::format_double(r) + "," + std::to_string(f) + "," + io::format_double(q) + "\n";
    }
  }
  o.summary = {{"max_ratio", worst}, {"bound", bound}, {"fields_per_radius", count}};
  o.lines.push_back("poincare max_ratio=" + fixed6(worst));
  return o;
}

inline CheckOutcome check_gradient_location(const RunConfig& c) {
  const Json s = section(c, "gradient_location");
  expect_keys(s, "verify.gradient_location", {"min_ratio"});
  const double min_ratio = get<double>(s, "min_ratio", 0.98, "verify.gradient_location");
  EigenOptions opts;
  opts.tol = c.tol_eig;
  CheckOutcome o{"gradient_location", true, "shape,max_grad,boundary_grad,ratio\n", {}, {}};
  for (const auto& [name, shape] : {std::pair{"disk", Shape::disk(1.0)}, std::pair{"square", Shape::square(1.0)}}) {
    const auto e = first_dirichlet_eig(Mask::whole(make_domain(shape, c.n)), opts);
    const auto g = gradient_location_check(e);
    o.passed = o.passed && g.ratio >= min_ratio;
    o.csv += std::string(name) + "," + io::format_double(g.max_grad) + "," + io::format_double(g.boundary_grad) + "," +
             io::format_double(g.ratio) + "\n";
    o.summary[name] = g.ratio;
    o.lines.push_back(std::string("gradient_location ") + name + " ratio=" + fixed6(g.ratio));
  }
  return o;
}

using CheckFn = CheckOutcome (*)(const RunConfig&);

inline CheckFn find_check(const std::string& name) {
  if (name == "cap") return check_cap;
  if (name == "gamma") return check_gamma;
  if (name == "psi") return check_psi;
  if (name == "mean_value") return check_mean_value;
  if (name == "acf") return check_acf;
  if (name == "cjk") return check_cjk;
  if (name == "poincare") return check_poincare;
  if (name == "gradient_location") return check_gradient_location;
  return nullptr;
}

}  // namespace detail

inline int cmd_verify(const RunConfig& c, bool verbose, std::ostream& out, std::ostream& err) {
  if (c.checks.empty()) throw ConfigError("verify needs a non-empty checks list");
  std::vector<detail::CheckFn> fns;
  std::set<std::string> seen;
  for (const auto& name : c.checks) {
    auto fn = detail::find_check(name);
    if (!fn) throw ConfigError("unknown check '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError("check '" + name + "' listed twice");
    fns.push_back(fn);
  }
  Log log(c.out_dir, verbose, err);
  std::vector<CheckOutcome> results(fns.size());
  const auto workers = static_cast<std::size_t>(worker_count());
  for (std::size_t start = 0; start < fns.size(); start += workers) {
    std::vector<std::future<CheckOutcome>> batch;
    for (std::size_t i = start; i < std::min(fns.size(), start + workers); ++i)
      batch.push_back(std::async(std::launch::async, fns[i], std::cref(c)));
    for (std::size_t i = 0; i < batch.size(); ++i) results[start + i] = batch[i].get();
  }
  nlohmann::ordered_json verdict;
  bool all = true;
  for (const auto& r : results) {
    io::atomic_write(c.out_dir / (r.name + ".csv"), r.csv);
    verdict[r.name] = {{"passed", r.passed}, {"summary", r.summary}};
    for (const auto& line : r.lines) out << line << "\n";
    out << r.name << ": " << (r.passed ? "pass" : "FAIL") << "\n";
    log("verify: " + r.name + (r.passed ? " passed" : " failed"));
    all = all && r.passed;
  }
  verdict["all_passed"] = all;
  io::atomic_write(c.out_dir / "verify.json", verdict.dump(2) + "\n");
  return all ? kOk : kCheckFailed;
}

/// Loads the config, dispatches, and maps exceptions to exit codes.
inline int run(const std::string& command, const std::filesystem::path& config, bool verbose, std::ostream& out,
               std::ostream& err) {
  try {
    const auto c = load_config(config);
    if (command == "eig") return cmd_eig(c, verbose, out, err);
    if (command == "partition") return cmd_partition(c, verbose, out, err);
    if (command == "sweep") return cmd_sweep(c, verbose, out, err);
    if (command == "verify") return cmd_verify(c, verbose, out, err);
    err << "unknown command '" << command << "'\n";
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kSolverError;
  }
}

}  // namespace segpart::cli
