// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance <path to the pcap executable>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "pcap/pcap.hpp"

using namespace pcap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

SolverParams with_p(double p) {
  SolverParams s;
  s.p = p;
  return s;
}

ScalarField random_boundary_data(const MeshManifold& m, std::mt19937_64& rng) {
  auto v = oracle::uniform_values(rng, static_cast<std::size_t>(m.num_vertices()));
  const auto inside = interior_mask(m);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (inside[i]) v[i] = 0.0;
  return make_field(std::move(v));
}

NodeSet nodes_within(const MeshManifold& m, double radius) {
  NodeSet out;
  for (Index v = 0; v < m.num_vertices(); ++v)
    if (m.vertex(v).norm() <= radius + 1e-12) out.push_back(v);
  return out;
}

Region elements_within(const MeshManifold& m, double radius) {
  std::vector<Index> els;
  for (Index e = 0; e < m.num_elements(); ++e) {
    bool in = true;
    for (Index v : m.simplex(e)) in = in && m.vertex(v).norm() <= radius + 1e-12;
    if (in) els.push_back(e);
  }
  return make_region(m, "ball", els);
}

// AC1: the radial oracle converges to the closed forms.
Outcome ac1() {
  Outcome o;
  struct Case {
    int n;
    double r, R, exact;
  };
  const Case cases[] = {{2, 0.5, 1.0, 2.0 * std::numbers::pi / std::log(2.0)}, {3, 1.0, 2.0, 8.0 * std::numbers::pi}};
  for (const auto& c : cases) {
    const auto t0 = Clock::now();
    double prev = 1e300, err = 0.0;
    for (int cells : {10000, 20000, 40000, 80000}) {
      err = std::abs(models::radial_oracle(c.n, 2.0, c.r, c.R, 1.0, 0.0, cells).capacity - c.exact) / c.exact;
      o.require(err < prev || err < 1e-12, "n=" + std::to_string(c.n) + " error not decreasing at " + std::to_string(cells));
      prev = err;
    }
    const double t = seconds(t0);
    o.detail << " n=" << c.n << " rel_err=" << sci(err) << " time=" << sci(t) << "s";
    o.require(err <= 1e-6, "n=" + std::to_string(c.n) + " error");
    o.require(t < 5.0, "n=" + std::to_string(c.n) + " runtime");
  }
  return o;
}

// AC2: annulus capacity against the oracle, levels 1 to 4.
Outcome ac2() {
  Outcome o;
  const auto t0 = Clock::now();
  for (double p : {1.5, 2.0, 3.0}) {
    const double ref = models::radial_oracle(2, p, 0.5, 1.0, 1.0, 0.0).capacity;
    double prev = 1e300, err = 0.0;
    for (int level = 1; level <= 4; ++level) {
      auto m = models::annulus_mesh(0.5, 1.0, level);
      std::vector<double> psi(static_cast<std::size_t>(m.num_vertices()), 1.0);
      auto est = capacity_compact(m, m.node_label("inner"), full_region(m), psi, with_p(p));
      err = std::abs(est.value - ref) / ref;
      o.require(est.converged, "p=" + sci(p) + " level " + std::to_string(level) + " not converged");
      o.require(err < prev, "p=" + sci(p) + " error not decreasing at level " + std::to_string(level));
      prev = err;
    }
    o.detail << " p=" << p << " err@4=" << sci(err);
    o.require(err <= 0.02, "p=" + sci(p) + " level 4 error");
  }
  const double t = seconds(t0);
  o.detail << " time=" << sci(t) << "s";
  o.require(t < 60.0, "runtime");
  return o;
}

// AC3: monotonicity, homogeneity and Minkowski subadditivity on random data.
Outcome ac3() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto m = models::disk_mesh(1.0, 2);
  const auto nv = static_cast<std::size_t>(m.num_vertices());
  double worst_h = 0.0, worst_m = 0.0, worst_c = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double p = 1.3 + 2.7 * unit(rng);
    const double b2 = 0.5 + 0.2 * unit(rng), b1 = b2 + 0.1 + 0.3 * unit(rng);
    const double a1 = 0.1 + 0.1 * unit(rng), a2 = a1 + 0.15 * unit(rng);
    const auto big = elements_within(m, b1), small = elements_within(m, b2);
    const auto K1 = nodes_within(m, a1), K2 = nodes_within(m, a2);
    const auto psi = oracle::uniform_values(rng, nv, -1.0, 2.0);
    const auto psi2 = oracle::uniform_values(rng, nv, -1.0, 1.0);
    const double lam = 4.0 * unit(rng) - 2.0;
    const auto params = with_p(p);
    auto cap = [&](const NodeSet& K, const Region& omega, const std::vector<double>& f) {
      auto est = capacity_compact(m, K, omega, f, params);
      o.require(est.converged, "trial " + std::to_string(trial) + " not converged");
      return est.value;
    };

    // (a) larger K or smaller Omega can only increase the capacity
    const double c_k1_big = cap(K1, big, psi), c_k2_big = cap(K2, big, psi), c_k2_small = cap(K2, small, psi);
    worst_m = std::max({worst_m, (c_k1_big - c_k2_big) / std::max(1.0, c_k2_big),
                        (c_k2_big - c_k2_small) / std::max(1.0, c_k2_small)});

    // (b)
    std::vector<double> scaled(nv), sum(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      scaled[i] = lam * psi[i];
      sum[i] = psi[i] + psi2[i];
    }
    const double cl = cap(K2, small, scaled);
    const double expect = std::pow(std::abs(lam), p) * c_k2_small;
    worst_h = std::max(worst_h, std::abs(cl - expect) / std::max(expect, 1e-300));

    // (c)
    const double cs = cap(K2, small, sum), cb = cap(K2, small, psi2);
    worst_c = std::max(worst_c, std::pow(cs, 1.0 / p) - std::pow(c_k2_small, 1.0 / p) - std::pow(cb, 1.0 / p));
  }
  const double t = seconds(t0);
  o.detail << " homogeneity=" << sci(worst_h) << " monotonicity=" << sci(worst_m) << " subadditivity=" << sci(worst_c)
           << " time=" << sci(t) << "s";
  o.require(worst_h <= 1e-10, "homogeneity");
  o.require(worst_m <= 1e-8, "monotonicity");
  o.require(worst_c <= 1e-6, "subadditivity");
  o.require(t < 120.0, "runtime");
  return o;
}

// AC4: iterative p = 2 solve against the direct linear solve.
Outcome ac4() {
  Outcome o;
  std::mt19937_64 rng(808);
  const MeshManifold meshes[] = {models::annulus_mesh(0.5, 1.0, 2), models::disk_mesh(1.0, 2), models::square_mesh(16)};
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    const auto& m = meshes[k % 3];
    auto h = random_boundary_data(m, rng);
    auto a = solve_dirichlet(m, h, with_p(2.0));
    auto b = solve_p2_direct(m, h);
    for (std::size_t i = 0; i < a.field.values.size(); ++i)
      worst = std::max(worst, std::abs(a.field.values[i] - b.field.values[i]));
  }
  o.detail << " max_diff=" << sci(worst);
  o.require(worst <= 1e-8, "agreement");
  return o;
}

// AC5: analytic gradient against central differences.
Outcome ac5() {
  Outcome o;
  std::mt19937_64 rng(55);
  const auto m = models::annulus_mesh(0.5, 1.0, 0);
  const auto n = static_cast<std::size_t>(m.num_vertices());
  const double eps = 1e-8;
  const double ps[] = {1.5, 2.0, 3.0};
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double p = ps[k % 3];
    auto u = make_field(oracle::uniform_values(rng, n, -2.0, 2.0));
    auto g = energy_gradient(m, u, p, eps);
    auto f = [&](const std::vector<double>& v) { return dirichlet_energy(m, v, p, eps).value; };
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      err = std::max(err, std::abs(oracle::central_difference(f, u.values, i) - g[i]));
      scale = std::max(scale, std::abs(g[i]));
    }
    worst = std::max(worst, err / scale);
  }
  o.detail << " max_rel_err=" << sci(worst);
  o.require(worst <= 1e-6, "gradient");
  return o;
}

// AC6: converged solves meet their tolerance; linear fields are exact.
Outcome ac6() {
  Outcome o;
  std::mt19937_64 rng(66);
  int solves = 0, converged = 0;
  double worst_ratio = 0.0;
  const MeshManifold meshes[] = {models::annulus_mesh(0.5, 1.0, 1), models::disk_mesh(1.0, 1), models::square_mesh(10)};
  for (const auto& m : meshes)
    for (double p : {1.5, 2.0, 3.0, 4.0})
      for (int k = 0; k < 2; ++k) {
        auto r = solve_dirichlet(m, random_boundary_data(m, rng), with_p(p));
        ++solves;
        if (!r.converged) continue;
        ++converged;
        const double wr = weak_residual(m, r.field.view(), p, interior_mask(m), r.epsilon);
        worst_ratio = std::max(worst_ratio, wr / r.tolerance);
        o.require(r.residual <= r.tolerance, "reported residual above tolerance");
      }
  double worst_linear = 0.0;
  for (const auto& m : meshes) {
    auto lin = sample_field(m, [](const Point& x) { return 0.7 * x(0) - 1.3 * x(1) + 2.0; });
    for (double p : {1.2, 1.5, 2.0, 3.0, 4.0}) {
      worst_linear = std::max(worst_linear, weak_residual(m, lin.view(), p, interior_mask(m)));
      auto r = solve_dirichlet(m, lin, with_p(p));
      worst_linear = std::max(worst_linear, weak_residual(m, r.field.view(), p, interior_mask(m)));
    }
  }
  o.detail << " converged=" << converged << "/" << solves << " max_residual/tol=" << sci(worst_ratio)
           << " linear=" << sci(worst_linear);
  o.require(converged == solves, "non-converged solve");
  o.require(worst_ratio <= 1.0, "weak residual above tolerance");
  o.require(worst_linear <= 1e-12, "linear fields");
  return o;
}

// AC7: exterior of the disk and the half-plane with sin x.
Outcome ac7() {
  Outcome o;
  const auto t0 = Clock::now();
  {
    const double R = 32.0;
    models::AnnulusOptions opt;
    opt.grading = models::RadialGrading::kLogarithmic;
    opt.n_theta = 72;
    opt.n_r = 40;
    auto m = models::annulus_mesh(1.0, R, 0, opt);
    auto exh = exhaustion(m, radius_rule(4.0, 2.0));
    std::vector<double> h(static_cast<std::size_t>(m.num_vertices()), 0.0);
    for (Index v : m.boundary_nodes()) h[static_cast<std::size_t>(v)] = 1.0;
    WitnessFamily fam;
    fam.constants = false;
    fam.zero = true;
    auto v = criterion_check(m, make_field(std::move(h)), exh, with_p(2.0), fam);
    o.detail << " (i) verdict=" << to_string(v.verdict);
    o.require(v.verdict == Verdict::kFiniteWitnessFound, "(i) verdict");
    if (v.best && v.solution) {
      double worst_level = 0.0;
      for (const auto& l : v.witnesses[*v.best].sequence.levels) {
        const double expect = 2.0 * std::numbers::pi / std::log(l.size);
        worst_level = std::max(worst_level, std::abs(l.estimate.value - expect) / expect);
      }
      auto prof = models::radial_oracle(2, 2.0, 1.0, R, 1.0, 0.0);
      double err = 0.0;
      for (Index i = 0; i < m.num_vertices(); ++i)
        err = std::max(err, std::abs(v.solution->u.values[static_cast<std::size_t>(i)] - prof(m.vertex(i).norm())));
      o.detail << " levels=" << v.witnesses[*v.best].sequence.levels.size() << " seq_err=" << sci(worst_level)
               << " u_err=" << sci(err);
      o.require(worst_level <= 0.05, "(i) sequence");
      o.require(err <= 0.02, "(i) profile");
    }
  }
  {
    auto m = models::half_plane_mesh(64.0, 8.0, 2);
    auto exh = exhaustion(m, abs_coordinate_rule(0, std::numbers::pi, 2.0));
    auto h = sample_field(m, [](const Point& x) { return std::sin(x(0)); });
    auto v = criterion_check(m, h, exh, with_p(2.0), WitnessFamily{});
    o.detail << " (ii) verdict=" << to_string(v.verdict);
    o.require(v.verdict == Verdict::kNoWitnessFoundInFamily, "(ii) verdict");
    if (v.headline) {
      const auto& w = v.witnesses[*v.headline];
      const double k = w.growth.fitted_exponent;
      o.detail << " headline=" << w.name << " exponent=" << k;
      o.require(k >= 0.8 && k <= 1.2, "(ii) exponent");
    } else {
      o.require(false, "(ii) no headline witness");
    }
  }
  const double t = seconds(t0);
  o.detail << " time=" << sci(t) << "s";
  o.require(t < 180.0, "runtime");
  return o;
}

// AC8: Poincare constant of the unit square.
Outcome ac8() {
  Outcome o;
  auto m = models::square_mesh(32);
  auto G = full_region(m);
  auto est = poincare_constant(m, 2.0, G, G, PoincareForm::kMean);
  const double expect = 1.0 / (std::numbers::pi * std::numbers::pi);
  const double rel = std::abs(est.constant - expect) / expect;
  o.detail << " C=" << est.constant << " rel_err=" << sci(rel) << " label=" << est.label;
  o.require(rel <= 0.05, "constant");
  return o;
}

std::string capture(const std::string& cmd, int& code) {
  std::string out;
  FILE* f = popen(cmd.c_str(), "r");
  if (!f) {
    code = -1;
    return out;
  }
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) out.append(buf, n);
  const int st = pclose(f);
  code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return out;
}

std::string without_timing(const std::string& text) {
  std::istringstream in(text);
  std::string out;
  for (std::string line; std::getline(in, line);)
    if (line.find("\"wall_time_s\"") == std::string::npos) out += line + "\n";
  return out;
}

// AC9: repeated CLI runs give the same report apart from timings.
Outcome ac9(const std::string& exe) {
  Outcome o;
  if (exe.empty()) {
    o.require(false, "no CLI path given");
    return o;
  }
  const std::string runs[] = {"study --levels 3 --p 3", "capacity --p 1.5", "solve", "poincare"};
  for (const auto& args : runs) {
    int c1 = 0, c2 = 0;
    const std::string a = capture(exe + " " + args + " 2>/dev/null", c1);
    const std::string b = capture(exe + " " + args + " 2>/dev/null", c2);
    const bool same = c1 == 0 && c2 == 0 && !a.empty() && without_timing(a) == without_timing(b);
    o.require(same, "'" + args + "' differs or failed");
  }
  o.detail << " runs=4";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string exe = argc > 1 ? argv[1] : "";
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"AC1 oracle self-consistency", ac1},
      {"AC2 FEM vs oracle", ac2},
      {"AC3 capacity properties", ac3},
      {"AC4 p=2 cross-check", ac4},
      {"AC5 gradient correctness", ac5},
      {"AC6 weak-form certificate", ac6},
      {"AC7 criterion demonstrations", ac7},
      {"AC8 Poincare estimate", ac8},
      {"AC9 determinism", [&] { return ac9(exe); }},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ":" << o.detail.str() << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << std::endl;
  return failed == 0 ? 0 : 1;
}
