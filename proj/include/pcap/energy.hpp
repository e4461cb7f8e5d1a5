#pragma once

// The p-Dirichlet energy of a piecewise-linear field, its derivative with
// respect to the nodal values, and the weak-form residual.
//
// With regularization eps the element density is (|grad u|^2 + eps^2)^{p/2};
// eps = 0 gives the exact Dirichlet integral. Element loops run in element
// order so sums are reproducible bit for bit.

#include <Eigen/Sparse>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcap/field.hpp"
#include "pcap/mesh.hpp"

namespace pcap {

struct EnergyReport {
  double value = 0.0;
  double p = 2.0;
  double epsilon = 0.0;
  std::string region = "full";
  std::vector<std::pair<std::string, double>> per_region;
};

inline void check_exponent(double p) {
  if (!(p > 1.0) || !std::isfinite(p)) throw ParameterError("exponent p must be > 1");
}

inline void check_epsilon(double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw ParameterError("epsilon must be >= 0");
}

namespace detail {

// Element values relative to the first vertex. Only differences enter the
// gradient, and the shift makes constant fields exactly flat.
inline void gather(const MeshManifold& mesh, Index e, std::span<const double> u, LocalVector& ue) {
  auto s = mesh.simplex(e);
  ue.resize(static_cast<Index>(s.size()));
  const double base = u[static_cast<std::size_t>(s[0])];
  for (std::size_t i = 0; i < s.size(); ++i)
    ue(static_cast<Index>(i)) = u[static_cast<std::size_t>(s[i])] - base;
}

inline double density(double sq, double p, double eps) {
  const double t = sq + eps * eps;
  if (t <= 0.0) return 0.0;
  return std::pow(t, 0.5 * p);
}

// d(density)/d(sq) * 2, i.e. the factor multiplying S u_e in the gradient.
inline double flux_factor(double sq, double p, double eps) {
  const double t = sq + eps * eps;
  if (t <= 0.0) return 0.0;
  return p * std::pow(t, 0.5 * (p - 2.0));
}

inline double element_energy(const MeshManifold& mesh, Index e, std::span<const double> u,
                             double p, double eps, LocalVector& ue) {
  gather(mesh, e, u, ue);
  const auto& geo = mesh.geometry(e);
  const double sq = std::max(ue.dot(geo.stiffness * ue), 0.0);
  return geo.volume * density(sq, p, eps);
}

inline void check_size(const MeshManifold& mesh, std::span<const double> u) {
  if (static_cast<Index>(u.size()) != mesh.num_vertices())
    throw ParameterError("field size does not match vertex count");
}

/// Full derivative of the (regularized) energy, fixed nodes included.
inline std::vector<double> full_gradient(const MeshManifold& mesh, std::span<const double> u,
                                         double p, double eps) {
  std::vector<double> g(static_cast<std::size_t>(mesh.num_vertices()), 0.0);
  LocalVector ue;
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    gather(mesh, e, u, ue);
    const auto& geo = mesh.geometry(e);
    LocalVector su = geo.stiffness * ue;
    const double sq = std::max(ue.dot(su), 0.0);
    const double k = geo.volume * flux_factor(sq, p, eps);
    if (k == 0.0) continue;
    auto s = mesh.simplex(e);
    for (std::size_t i = 0; i < s.size(); ++i)
      g[static_cast<std::size_t>(s[i])] += k * su(static_cast<Index>(i));
  }
  return g;
}

}  // namespace detail

/// Dirichlet integral of |grad u|^p over the mesh (or over `region`).
inline EnergyReport dirichlet_energy(const MeshManifold& mesh, std::span<const double> u,
                                     double p, double eps = 0.0,
                                     const Region* region = nullptr) {
  check_exponent(p);
  check_epsilon(eps);
  detail::check_size(mesh, u);
  EnergyReport r;
  r.p = p;
  r.epsilon = eps;
  LocalVector ue;
  if (region) {
    r.region = region->name;
    for (Index e : region->elements) r.value += detail::element_energy(mesh, e, u, p, eps, ue);
  } else {
    for (Index e = 0; e < mesh.num_elements(); ++e)
      r.value += detail::element_energy(mesh, e, u, p, eps, ue);
  }
  return r;
}

inline EnergyReport dirichlet_energy(const MeshManifold& mesh, const ScalarField& f, double p,
                                     double eps = 0.0, const Region* region = nullptr) {
  return dirichlet_energy(mesh, f.view(), p, eps, region);
}

/// Energy with a breakdown over the given regions.
inline EnergyReport dirichlet_energy(const MeshManifold& mesh, std::span<const double> u,
                                     double p, double eps, std::span<const Region> regions) {
  EnergyReport r = dirichlet_energy(mesh, u, p, eps);
  for (const auto& reg : regions)
    r.per_region.emplace_back(reg.name, dirichlet_energy(mesh, u, p, eps, &reg).value);
  return r;
}

/// Derivative of the regularized energy with respect to each free nodal
/// value; fixed nodes report 0.
inline std::vector<double> energy_gradient(const MeshManifold& mesh, const ScalarField& f,
                                           double p, double eps) {
  check_exponent(p);
  check_epsilon(eps);
  detail::check_size(mesh, f.view());
  auto g = detail::full_gradient(mesh, f.view(), p, eps);
  if (!f.fixed.empty())
    for (std::size_t i = 0; i < g.size(); ++i)
      if (f.fixed[i]) g[i] = 0.0;
  return g;
}

/// Max over test nodes of |int g^{ij}|grad u|^{p-2} d_j u d_i phi dV| with
/// phi the nodal hat functions (regularized by eps when eps > 0).
inline double weak_residual(const MeshManifold& mesh, std::span<const double> u, double p,
                            const NodeMask& test_mask, double eps = 0.0) {
  check_exponent(p);
  check_epsilon(eps);
  detail::check_size(mesh, u);
  if (static_cast<Index>(test_mask.size()) != mesh.num_vertices())
    throw ParameterError("test mask size does not match vertex count");
  bool any = false;
  for (char c : test_mask) any = any || c;
  if (!any) throw ParameterError("empty test space");
  auto g = detail::full_gradient(mesh, u, p, eps);
  double r = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (test_mask[i]) r = std::max(r, std::abs(g[i]));
  return r;
}

// ---------------------------------------------------------------------------
// Linear assembly helpers shared by the solvers and the Poincare estimator.

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Sum over elements of weight_e * volume_e * S_e, restricted to `elements`
/// when given.
inline SparseMatrix assemble_stiffness(const MeshManifold& mesh,
                                       std::span<const double> weights = {},
                                       const std::vector<Index>* elements = nullptr) {
  std::vector<Eigen::Triplet<double>> trip;
  const int k = mesh.nodes_per_element();
  trip.reserve(static_cast<std::size_t>(mesh.num_elements()) * k * k);
  auto add = [&](Index e) {
    const auto& geo = mesh.geometry(e);
    const double w = geo.volume * (weights.empty() ? 1.0 : weights[static_cast<std::size_t>(e)]);
    auto s = mesh.simplex(e);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        trip.emplace_back(s[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(j)],
                          w * geo.stiffness(i, j));
  };
  if (elements) {
    for (Index e : *elements) add(e);
  } else {
    for (Index e = 0; e < mesh.num_elements(); ++e) add(e);
  }
  SparseMatrix a(mesh.num_vertices(), mesh.num_vertices());
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

/// Consistent P1 mass matrix, optionally restricted to `elements`.
inline SparseMatrix assemble_mass(const MeshManifold& mesh,
                                  const std::vector<Index>* elements = nullptr) {
  std::vector<Eigen::Triplet<double>> trip;
  const int k = mesh.nodes_per_element();
  const int d = mesh.dim();
  auto add = [&](Index e) {
    const double base = mesh.geometry(e).volume / ((d + 1.0) * (d + 2.0));
    auto s = mesh.simplex(e);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        trip.emplace_back(s[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(j)],
                          (i == j ? 2.0 : 1.0) * base);
  };
  if (elements) {
    for (Index e : *elements) add(e);
  } else {
    for (Index e = 0; e < mesh.num_elements(); ++e) add(e);
  }
  SparseMatrix m(mesh.num_vertices(), mesh.num_vertices());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

/// Row sums of the mass matrix: the exact integral of each hat function.
inline std::vector<double> lumped_mass(const MeshManifold& mesh,
                                       const std::vector<Index>* elements = nullptr) {
  std::vector<double> m(static_cast<std::size_t>(mesh.num_vertices()), 0.0);
  const double share = 1.0 / mesh.nodes_per_element();
  auto add = [&](Index e) {
    for (Index v : mesh.simplex(e)) m[static_cast<std::size_t>(v)] += share * mesh.geometry(e).volume;
  };
  if (elements) {
    for (Index e : *elements) add(e);
  } else {
    for (Index e = 0; e < mesh.num_elements(); ++e) add(e);
  }
  return m;
}

inline nlohmann::ordered_json to_json(const EnergyReport& r) {
  nlohmann::ordered_json j;
  j["value"] = r.value;
  j["p"] = r.p;
  j["epsilon"] = r.epsilon;
  j["region"] = r.region;
  j["tolerance"] = 0.0;  // element integrals are exact
  if (!r.per_region.empty()) {
    auto& pr = j["per_region"];
    pr = nlohmann::ordered_json::object();
    for (const auto& [name, v] : r.per_region) pr[name] = v;
  }
  return j;
}

}  // namespace pcap
