#pragma once

// One-dimensional reference solution for rotationally symmetric problems on
// r <= rho <= R in R^n. Shares no code with the mesh solvers: a uniform
// radial grid, midpoint quadrature of rho^{n-1} |u'|^p, and a tridiagonal
// Newton iteration with backtracking on the discrete energy.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "pcap/types.hpp"

namespace pcap::models {

struct RadialProfile {
  int n = 2;
  double p = 2.0;
  double r = 0.0, R = 1.0;
  double a = 1.0, b = 0.0;
  std::vector<double> radii;
  std::vector<double> values;
  /// Richardson extrapolation of the grid energies at N and 2N cells.
  double capacity = 0.0;
  /// Energy on the finest grid itself.
  double grid_capacity = 0.0;
  int newton_iterations = 0;

  /// Linear interpolation of the sampled profile.
  double operator()(double rho) const {
    if (rho <= radii.front()) return values.front();
    if (rho >= radii.back()) return values.back();
    const double h = (radii.back() - radii.front()) / static_cast<double>(radii.size() - 1);
    auto k = static_cast<std::size_t>((rho - radii.front()) / h);
    k = std::min(k, radii.size() - 2);
    const double t = (rho - radii[k]) / h;
    return (1.0 - t) * values[k] + t * values[k + 1];
  }
};

/// Area of the unit sphere S^{n-1}.
inline double unit_sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

namespace detail {

struct GridSolution {
  std::vector<double> u;
  double energy = 0.0;
  int iterations = 0;
};

inline GridSolution radial_grid_solve(int n, double p, double r, double R, double a, double b,
                                      int cells) {
  const double h = (R - r) / cells;
  std::vector<double> c(static_cast<std::size_t>(cells));
  for (int i = 0; i < cells; ++i)
    c[static_cast<std::size_t>(i)] = std::pow(r + (i + 0.5) * h, n - 1) * std::pow(h, 1.0 - p);
  const double omega = unit_sphere_area(n);

  GridSolution out;
  out.u.resize(static_cast<std::size_t>(cells) + 1);
  for (int i = 0; i <= cells; ++i) out.u[static_cast<std::size_t>(i)] = a + (b - a) * i / cells;

  auto energy = [&](const std::vector<double>& u) {
    double e = 0.0;
    for (int i = 0; i < cells; ++i)
      e += c[static_cast<std::size_t>(i)] *
           std::pow(std::abs(u[static_cast<std::size_t>(i) + 1] - u[static_cast<std::size_t>(i)]), p);
    return e;
  };

  const int m = cells - 1;  // interior unknowns u_1..u_{cells-1}
  std::vector<double> diag(static_cast<std::size_t>(m)), off(static_cast<std::size_t>(m)),
      rhs(static_cast<std::size_t>(m)), flux(static_cast<std::size_t>(cells)),
      curv(static_cast<std::size_t>(cells));
  double e0 = energy(out.u);
  for (int it = 0; it < 200; ++it) {
    double fmax = -std::numeric_limits<double>::infinity(), fmin = -fmax;
    for (int i = 0; i < cells; ++i) {
      const double du = out.u[static_cast<std::size_t>(i) + 1] - out.u[static_cast<std::size_t>(i)];
      const double ad = std::max(std::abs(du), 1e-300);
      flux[static_cast<std::size_t>(i)] = p * c[static_cast<std::size_t>(i)] * std::pow(ad, p - 2.0) * du;
      curv[static_cast<std::size_t>(i)] = p * (p - 1.0) * c[static_cast<std::size_t>(i)] * std::pow(ad, p - 2.0);
      fmax = std::max(fmax, flux[static_cast<std::size_t>(i)]);
      fmin = std::min(fmin, flux[static_cast<std::size_t>(i)]);
    }
    // Stationarity of the discrete energy means a constant flux.
    if (fmax - fmin <= 1e-10 * std::max(std::abs(fmax), std::abs(fmin))) break;
    for (int k = 0; k < m; ++k) {
      // d/du_{k+1}: flux_k - flux_{k+1}
      rhs[static_cast<std::size_t>(k)] = -(flux[static_cast<std::size_t>(k)] - flux[static_cast<std::size_t>(k) + 1]);
      diag[static_cast<std::size_t>(k)] = curv[static_cast<std::size_t>(k)] + curv[static_cast<std::size_t>(k) + 1];
      off[static_cast<std::size_t>(k)] = -curv[static_cast<std::size_t>(k) + 1];
    }
    // Thomas algorithm (symmetric tridiagonal, positive definite).
    std::vector<double> cp(static_cast<std::size_t>(m)), dp(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
      const double lower = k > 0 ? off[static_cast<std::size_t>(k) - 1] : 0.0;
      const double denom = diag[static_cast<std::size_t>(k)] - (k > 0 ? lower * cp[static_cast<std::size_t>(k) - 1] : 0.0);
      cp[static_cast<std::size_t>(k)] = off[static_cast<std::size_t>(k)] / denom;
      dp[static_cast<std::size_t>(k)] =
          (rhs[static_cast<std::size_t>(k)] - (k > 0 ? lower * dp[static_cast<std::size_t>(k) - 1] : 0.0)) / denom;
    }
    std::vector<double> step(static_cast<std::size_t>(m));
    for (int k = m - 1; k >= 0; --k)
      step[static_cast<std::size_t>(k)] =
          dp[static_cast<std::size_t>(k)] - (k + 1 < m ? cp[static_cast<std::size_t>(k)] * step[static_cast<std::size_t>(k) + 1] : 0.0);

    double alpha = 1.0;
    std::vector<double> trial = out.u;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      bool monotone = true;
      for (int k = 0; k < m; ++k)
        trial[static_cast<std::size_t>(k) + 1] = out.u[static_cast<std::size_t>(k) + 1] + alpha * step[static_cast<std::size_t>(k)];
      for (int i = 0; i < cells && monotone; ++i)
        monotone = (trial[static_cast<std::size_t>(i) + 1] - trial[static_cast<std::size_t>(i)]) * (b - a) > 0.0;
      if (!monotone) continue;
      const double e1 = energy(trial);
      if (e1 <= e0 + 1e-15 * e0) {
        out.u.swap(trial);
        e0 = e1;
        accepted = true;
        break;
      }
    }
    ++out.iterations;
    if (!accepted) break;
    // Updates below roundoff in u: the flux spread left is cancellation noise.
    double smax = 0.0;
    for (double x : step) smax = std::max(smax, std::abs(x));
    if (alpha * smax <= 1e-13 * std::max(std::abs(a), std::abs(b))) break;
  }
  out.energy = omega * e0;
  return out;
}

}  // namespace detail

/// Minimizes omega_n * int_r^R |u'|^p rho^{n-1} drho with u(r) = a,
/// u(R) = b on grids of `cells` and 2*`cells` cells. For a = 1, b = 0 the
/// capacity is the p-capacity of the annulus.
inline RadialProfile radial_oracle(int n, double p, double r, double R, double a, double b,
                                   int cells = 10000) {
  if (n < 2) throw ParameterError("radial oracle needs n >= 2");
  if (!(p > 1.0)) throw ParameterError("radial oracle needs p > 1");
  if (!(r > 0.0) || !(R > r)) throw ParameterError("radial oracle needs 0 < r < R");
  if (cells < 10000) throw ParameterError("radial oracle needs at least 10^4 cells");
  RadialProfile prof;
  prof.n = n;
  prof.p = p;
  prof.r = r;
  prof.R = R;
  prof.a = a;
  prof.b = b;
  const int fine = 2 * cells;
  for (int i = 0; i <= fine; ++i) prof.radii.push_back(i == fine ? R : r + (R - r) * i / fine);
  if (a == b) {
    prof.values.assign(prof.radii.size(), a);
    return prof;
  }
  auto coarse = detail::radial_grid_solve(n, p, r, R, a, b, cells);
  auto sol = detail::radial_grid_solve(n, p, r, R, a, b, fine);
  prof.values = std::move(sol.u);
  prof.grid_capacity = sol.energy;
  prof.capacity = (4.0 * sol.energy - coarse.energy) / 3.0;
  prof.newton_iterations = sol.iterations;
  return prof;
}

}  // namespace pcap::models
