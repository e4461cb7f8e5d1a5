#pragma once

// Model manifolds: planar annuli and disks, rectangles standing in for the
// half-plane, and surfaces of revolution with the warped metric
// dt^2 + f(t)^2 dtheta^2.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pcap/mesh.hpp"

namespace pcap::models {

enum class RadialGrading { kUniform, kLogarithmic };

struct AnnulusOptions {
  RadialGrading grading = RadialGrading::kUniform;
  /// Angular cells at refinement 0 (0 = 16).
  int n_theta = 0;
  /// Radial cells at refinement 0 (0 = chosen for square-ish cells).
  int n_r = 0;
  /// Label the outer circle as a second boundary component instead of as
  /// the truncation.
  bool outer_is_boundary = false;
};

namespace detail {

inline Index grid(int i, int j, int nj) { return static_cast<Index>(i * nj + j); }

inline Point point2(double x, double y) {
  Point p(2);
  p << x, y;
  return p;
}

// Triangulates the (ni x nj) quad grid, periodic in j when `wrap` is set.
inline void quad_grid(MeshDescription& d, int ni, int nj_nodes, bool wrap) {
  const int nj_cells = wrap ? nj_nodes : nj_nodes - 1;
  for (int i = 0; i + 1 < ni; ++i)
    for (int j = 0; j < nj_cells; ++j) {
      const int jn = (j + 1) % nj_nodes;
      Index a = grid(i, j, nj_nodes), b = grid(i + 1, j, nj_nodes);
      Index c = grid(i + 1, jn, nj_nodes), e = grid(i, jn, nj_nodes);
      d.simplices.push_back({a, b, c});
      d.simplices.push_back({a, c, e});
    }
}

}  // namespace detail

/// Flat annulus r <= |x| <= R. The inner circle is the boundary; the outer
/// circle is the truncation (or a second boundary component). Node labels
/// "inner" and "outer" name the two circles. Each refinement level doubles
/// both cell counts.
inline MeshManifold annulus_mesh(double r, double R, int refinement,
                                 const AnnulusOptions& opt = {}) {
  if (!(r > 0.0) || !(R > r)) throw ParameterError("annulus needs 0 < r < R");
  if (refinement < 0) throw ParameterError("refinement must be >= 0");
  const int scale = 1 << refinement;
  const int nt0 = opt.n_theta > 0 ? opt.n_theta : 16;
  int nr0 = opt.n_r;
  if (nr0 <= 0) {
    const double h = 2.0 * std::numbers::pi / nt0;
    const double span = opt.grading == RadialGrading::kLogarithmic
                            ? std::log(R / r)
                            : (R - r) / (0.5 * (r + R));
    nr0 = std::max(1, static_cast<int>(std::lround(span / h)));
  }
  const int nt = nt0 * scale, nr = nr0 * scale;

  MeshDescription d;
  d.dim = 2;
  for (int i = 0; i <= nr; ++i) {
    const double s = static_cast<double>(i) / nr;
    double rho = opt.grading == RadialGrading::kLogarithmic ? r * std::exp(s * std::log(R / r))
                                                            : r + s * (R - r);
    if (i == nr) rho = R;
    for (int j = 0; j < nt; ++j) {
      const double th = 2.0 * std::numbers::pi * j / nt;
      d.vertices.push_back(detail::point2(rho * std::cos(th), rho * std::sin(th)));
    }
  }
  detail::quad_grid(d, nr + 1, nt, true);
  NodeSet inner, outer;
  for (int j = 0; j < nt; ++j) {
    inner.push_back(detail::grid(0, j, nt));
    outer.push_back(detail::grid(nr, j, nt));
  }
  d.boundary_nodes = inner;
  if (opt.outer_is_boundary)
    d.boundary_nodes.insert(d.boundary_nodes.end(), outer.begin(), outer.end());
  else
    d.truncation_nodes = outer;
  d.node_labels["inner"] = inner;
  d.node_labels["outer"] = outer;
  return build_mesh(std::move(d));
}

/// Flat disk of the given radius; the circle is the boundary.
inline MeshManifold disk_mesh(double radius, int refinement) {
  if (!(radius > 0.0)) throw ParameterError("disk radius must be > 0");
  if (refinement < 0) throw ParameterError("refinement must be >= 0");
  const int scale = 1 << refinement;
  const int nt = 8 * scale, nr = 2 * scale;
  MeshDescription d;
  d.dim = 2;
  d.vertices.push_back(detail::point2(0.0, 0.0));
  for (int i = 1; i <= nr; ++i)
    for (int j = 0; j < nt; ++j) {
      const double rho = radius * i / nr, th = 2.0 * std::numbers::pi * j / nt;
      d.vertices.push_back(detail::point2(rho * std::cos(th), rho * std::sin(th)));
    }
  auto ring = [nt](int i, int j) { return static_cast<Index>(1 + (i - 1) * nt + (j % nt)); };
  for (int j = 0; j < nt; ++j) d.simplices.push_back({0, ring(1, j), ring(1, j + 1)});
  for (int i = 1; i < nr; ++i)
    for (int j = 0; j < nt; ++j) {
      d.simplices.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      d.simplices.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  for (int j = 0; j < nt; ++j) d.boundary_nodes.push_back(ring(nr, j));
  return build_mesh(std::move(d));
}

/// Flat half-disk {|x| <= radius, y >= 0}: the diameter is the boundary, the
/// arc is the truncation (the arc end points belong to the truncation).
inline MeshManifold half_disk_mesh(double radius, int refinement) {
  if (!(radius > 0.0)) throw ParameterError("half-disk radius must be > 0");
  if (refinement < 0) throw ParameterError("refinement must be >= 0");
  const int scale = 1 << refinement;
  const int nt = 4 * scale, nr = 2 * scale;  // nt angular cells over [0, pi]
  MeshDescription d;
  d.dim = 2;
  d.vertices.push_back(detail::point2(0.0, 0.0));
  for (int i = 1; i <= nr; ++i)
    for (int j = 0; j <= nt; ++j) {
      const double rho = radius * i / nr, th = std::numbers::pi * j / nt;
      d.vertices.push_back(detail::point2(rho * std::cos(th), rho * std::sin(th)));
    }
  auto ring = [nt](int i, int j) { return static_cast<Index>(1 + (i - 1) * (nt + 1) + j); };
  for (int j = 0; j < nt; ++j) d.simplices.push_back({0, ring(1, j), ring(1, j + 1)});
  for (int i = 1; i < nr; ++i)
    for (int j = 0; j < nt; ++j) {
      d.simplices.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      d.simplices.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  d.boundary_nodes.push_back(0);
  for (int i = 1; i < nr; ++i) {
    d.boundary_nodes.push_back(ring(i, 0));
    d.boundary_nodes.push_back(ring(i, nt));
  }
  for (int j = 0; j <= nt; ++j) d.truncation_nodes.push_back(ring(nr, j));
  return build_mesh(std::move(d));
}

/// Flat rectangle [-W/2, W/2] x [0, H] standing in for the half-plane. The
/// bottom edge is the boundary; the other three edges (and the two bottom
/// corners) are the truncation. Cell size is 2^-refinement.
inline MeshManifold half_plane_mesh(double width, double height, int refinement) {
  if (!(width > 0.0) || !(height > 0.0)) throw ParameterError("half-plane needs W, H > 0");
  if (refinement < 0) throw ParameterError("refinement must be >= 0");
  const int scale = 1 << refinement;
  const int nx = std::max(1, static_cast<int>(std::ceil(width - 1e-12))) * scale;
  const int ny = std::max(1, static_cast<int>(std::ceil(height - 1e-12))) * scale;
  MeshDescription d;
  d.dim = 2;
  for (int i = 0; i <= ny; ++i)
    for (int j = 0; j <= nx; ++j)
      d.vertices.push_back(
          detail::point2(-0.5 * width + width * j / nx, height * i / ny));
  detail::quad_grid(d, ny + 1, nx + 1, false);
  for (int j = 0; j <= nx; ++j) {
    Index b = detail::grid(0, j, nx + 1);
    (j == 0 || j == nx ? d.truncation_nodes : d.boundary_nodes).push_back(b);
    d.truncation_nodes.push_back(detail::grid(ny, j, nx + 1));
  }
  for (int i = 1; i < ny; ++i) {
    d.truncation_nodes.push_back(detail::grid(i, 0, nx + 1));
    d.truncation_nodes.push_back(detail::grid(i, nx, nx + 1));
  }
  return build_mesh(std::move(d));
}

/// Flat square [0, size]^2 with n x n cells; its whole perimeter is the
/// boundary (no truncation).
inline MeshManifold square_mesh(int n, double size = 1.0) {
  if (n < 1 || !(size > 0.0)) throw ParameterError("square needs n >= 1 and size > 0");
  MeshDescription d;
  d.dim = 2;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) d.vertices.push_back(detail::point2(size * j / n, size * i / n));
  detail::quad_grid(d, n + 1, n + 1, false);
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j)
      if (i == 0 || j == 0 || i == n || j == n) d.boundary_nodes.push_back(detail::grid(i, j, n + 1));
  return build_mesh(std::move(d));
}

/// Warped product [t0, t1] x S^1 sampled on a t-grid.
struct RevolutionSpec {
  std::vector<double> t;  // strictly increasing
  std::vector<double> f;  // f(t) > 0
  int n_theta = 32;
  /// Cut the manifold at this t (mesh uses samples with t <= truncation).
  /// NaN keeps every sample.
  double truncation = std::numeric_limits<double>::quiet_NaN();
};

inline RevolutionSpec sampled_profile(double t0, double t1, int n_t, int n_theta,
                                      const std::function<double(double)>& f) {
  RevolutionSpec s;
  s.n_theta = n_theta;
  for (int i = 0; i <= n_t; ++i) {
    const double t = i == n_t ? t1 : t0 + (t1 - t0) * i / n_t;
    s.t.push_back(t);
    s.f.push_back(f(t));
  }
  return s;
}

/// Chart (t, theta) with theta identified modulo 2 pi and element metric
/// diag(1, f(t_barycenter)^2) interpolated from the samples. The circle
/// t = t0 is the boundary, t = t_max the truncation.
inline MeshManifold revolution_manifold(const RevolutionSpec& spec) {
  if (spec.t.size() < 2 || spec.t.size() != spec.f.size())
    throw ParameterError("revolution profile needs >= 2 matching samples");
  if (spec.n_theta < 3) throw ParameterError("revolution needs n_theta >= 3");
  for (std::size_t i = 0; i < spec.t.size(); ++i) {
    if (!(spec.f[i] > 0.0)) throw ParameterError("revolution profile must be positive");
    if (i > 0 && !(spec.t[i] > spec.t[i - 1]))
      throw ParameterError("revolution t-grid must be strictly increasing");
  }
  std::vector<double> ts, fs;
  for (std::size_t i = 0; i < spec.t.size(); ++i)
    if (std::isnan(spec.truncation) || spec.t[i] <= spec.truncation + 1e-12) {
      ts.push_back(spec.t[i]);
      fs.push_back(spec.f[i]);
    }
  if (ts.size() < 2) throw ParameterError("truncation leaves fewer than 2 samples");

  auto profile = [ts, fs](double t) {
    auto it = std::upper_bound(ts.begin(), ts.end(), t);
    std::size_t k = it == ts.begin() ? 0 : static_cast<std::size_t>(it - ts.begin()) - 1;
    k = std::min(k, ts.size() - 2);
    const double a = (t - ts[k]) / (ts[k + 1] - ts[k]);
    return (1.0 - a) * fs[k] + a * fs[k + 1];
  };
  const int nt = spec.n_theta;
  MeshDescription d;
  d.dim = 2;
  d.periods = {0.0, 2.0 * std::numbers::pi};
  d.metric_fn = [profile](const Point& x) {
    Metric g = Metric::Zero(2, 2);
    const double f = profile(x(0));
    g(0, 0) = 1.0;
    g(1, 1) = f * f;
    return g;
  };
  const int ni = static_cast<int>(ts.size());
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < nt; ++j)
      d.vertices.push_back(detail::point2(ts[static_cast<std::size_t>(i)], 2.0 * std::numbers::pi * j / nt));
  detail::quad_grid(d, ni, nt, true);
  for (int j = 0; j < nt; ++j) {
    d.boundary_nodes.push_back(detail::grid(0, j, nt));
    d.truncation_nodes.push_back(detail::grid(ni - 1, j, nt));
  }
  return build_mesh(std::move(d));
}

}  // namespace pcap::models
