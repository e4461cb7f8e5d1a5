#pragma once

// Minimization of the regularized p-Dirichlet energy over fields with some
// nodal values held fixed.
//
// IRLS: each iteration solves the weighted Laplace system with element
// weights (|grad u_k|^2 + eps^2)^{(p-2)/2}; the solution defines a descent
// direction that is damped by step halving until the energy decreases, then
// refined by one parabolic fit. Gradient descent uses the fixed unweighted
// stiffness as a preconditioner (an H^1 gradient step) with the same line
// search.

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcap/energy.hpp"
#include "pcap/field.hpp"
#include "pcap/mesh.hpp"

namespace pcap {

enum class Method { kIrls, kGradientDescent };

inline const char* to_string(Method m) {
  return m == Method::kIrls ? "irls" : "gradient_descent";
}

struct SolverParams {
  double p = 2.0;
  double epsilon = 1e-8;
  /// Max-norm of the weak residual at which a solve stops. Unset means
  /// 1e-8 * max(1, energy of the initial iterate).
  std::optional<double> tol_residual;
  /// Stop when an accepted step lowers the energy by less than this fraction.
  double tol_energy = 1e-16;
  int max_iter = 200;
  double damping = 1.0;
  Method method = Method::kIrls;

  void validate() const {
    check_exponent(p);
    check_epsilon(epsilon);
    if (tol_residual && !(*tol_residual > 0.0))
      throw ParameterError("tol_residual must be > 0");
    if (!(tol_energy >= 0.0)) throw ParameterError("tol_energy must be >= 0");
    if (max_iter < 1) throw ParameterError("max_iter must be >= 1");
    if (!(damping > 0.0) || damping > 1.0) throw ParameterError("damping must be in (0, 1]");
  }
};

struct SolveResult {
  ScalarField field;
  /// Exact Dirichlet integral of the returned field (no regularization).
  EnergyReport energy;
  double residual = 0.0;
  double tolerance = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Regularization used while solving.
  double epsilon = 0.0;
  /// Regularized energy after initialization and after each accepted step.
  std::vector<double> energy_history;
  Method method = Method::kIrls;
};

/// Member of the natural-boundary class: residual measured over every node
/// except the outer truncation.
struct NeumannSolution {
  SolveResult result;
  ScalarField v;  // seed - w
  double full_residual = 0.0;
  NodeMask test_space;
};

namespace detail {

struct FreeComponents {
  std::vector<std::vector<Index>> nodes;  // components without any fixed node
  std::vector<Index> pinned;
  std::vector<double> target_mean;
};

inline Index find_root(std::vector<Index>& parent, Index v) {
  while (parent[static_cast<std::size_t>(v)] != v) {
    parent[static_cast<std::size_t>(v)] =
        parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
    v = parent[static_cast<std::size_t>(v)];
  }
  return v;
}

inline std::vector<Index> component_ids(const MeshManifold& mesh) {
  std::vector<Index> parent(static_cast<std::size_t>(mesh.num_vertices()));
  std::iota(parent.begin(), parent.end(), 0);
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    auto s = mesh.simplex(e);
    Index r0 = find_root(parent, s[0]);
    for (std::size_t i = 1; i < s.size(); ++i) {
      Index ri = find_root(parent, s[i]);
      if (ri != r0) parent[static_cast<std::size_t>(std::max(ri, r0))] = std::min(ri, r0);
      r0 = std::min(ri, r0);
    }
  }
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    parent[static_cast<std::size_t>(v)] = find_root(parent, v);
  return parent;
}

// Components with no fixed node have a constant null direction. One node per
// such component is pinned during linear solves and the component mean is
// restored to the start field's mean after every step.
inline FreeComponents free_components(const MeshManifold& mesh, const ScalarField& start,
                                      const std::vector<double>& mass) {
  auto id = component_ids(mesh);
  std::vector<char> has_fixed(static_cast<std::size_t>(mesh.num_vertices()), 0);
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    if (start.is_fixed(v)) has_fixed[static_cast<std::size_t>(id[static_cast<std::size_t>(v)])] = 1;
  FreeComponents fc;
  std::vector<Index> slot(static_cast<std::size_t>(mesh.num_vertices()), -1);
  for (Index v = 0; v < mesh.num_vertices(); ++v) {
    Index root = id[static_cast<std::size_t>(v)];
    if (has_fixed[static_cast<std::size_t>(root)]) continue;
    if (slot[static_cast<std::size_t>(root)] < 0) {
      slot[static_cast<std::size_t>(root)] = static_cast<Index>(fc.nodes.size());
      fc.nodes.emplace_back();
      fc.pinned.push_back(v);
    }
    fc.nodes[static_cast<std::size_t>(slot[static_cast<std::size_t>(root)])].push_back(v);
  }
  for (const auto& comp : fc.nodes) {
    double num = 0.0, den = 0.0;
    for (Index v : comp) {
      num += mass[static_cast<std::size_t>(v)] * start.values[static_cast<std::size_t>(v)];
      den += mass[static_cast<std::size_t>(v)];
    }
    fc.target_mean.push_back(den > 0.0 ? num / den
                                       : start.values[static_cast<std::size_t>(comp.front())]);
  }
  return fc;
}

inline void restore_means(const FreeComponents& fc, const std::vector<double>& mass,
                          std::vector<double>& u) {
  for (std::size_t c = 0; c < fc.nodes.size(); ++c) {
    double num = 0.0, den = 0.0;
    for (Index v : fc.nodes[c]) {
      num += mass[static_cast<std::size_t>(v)] * u[static_cast<std::size_t>(v)];
      den += mass[static_cast<std::size_t>(v)];
    }
    if (!(den > 0.0)) continue;
    const double shift = fc.target_mean[c] - num / den;
    for (Index v : fc.nodes[c]) u[static_cast<std::size_t>(v)] += shift;
  }
}

// Weighted stiffness restricted to the unknowns, factorized.
class ReducedSystem {
 public:
  ReducedSystem(const MeshManifold& mesh, std::vector<Index> row_of, Index n)
      : mesh_(mesh), row_of_(std::move(row_of)), n_(n) {}

  Index size() const noexcept { return n_; }

  void factorize(std::span<const double> weights) {
    std::vector<Eigen::Triplet<double>> trip;
    const int k = mesh_.nodes_per_element();
    trip.reserve(static_cast<std::size_t>(mesh_.num_elements()) * k * k);
    for (Index e = 0; e < mesh_.num_elements(); ++e) {
      const auto& geo = mesh_.geometry(e);
      const double w = geo.volume * weights[static_cast<std::size_t>(e)];
      auto s = mesh_.simplex(e);
      for (int i = 0; i < k; ++i) {
        Index ri = row_of_[static_cast<std::size_t>(s[static_cast<std::size_t>(i)])];
        if (ri < 0) continue;
        for (int j = 0; j < k; ++j) {
          Index rj = row_of_[static_cast<std::size_t>(s[static_cast<std::size_t>(j)])];
          if (rj < 0) continue;
          trip.emplace_back(ri, rj, w * geo.stiffness(i, j));
        }
      }
    }
    SparseMatrix a(n_, n_);
    a.setFromTriplets(trip.begin(), trip.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(a);
      analyzed_ = true;
    }
    ldlt_.factorize(a);
    if (ldlt_.info() != Eigen::Success) throw SolverError("weighted stiffness factorization failed");
  }

  // Solves A d = -g / scale on the unknowns; returns a full-length direction.
  std::vector<double> direction(const std::vector<double>& g, double scale) const {
    Eigen::VectorXd rhs(n_);
    for (std::size_t v = 0; v < row_of_.size(); ++v)
      if (row_of_[v] >= 0) rhs(row_of_[v]) = -g[v] / scale;
    Eigen::VectorXd x = ldlt_.solve(rhs);
    std::vector<double> d(row_of_.size(), 0.0);
    for (std::size_t v = 0; v < row_of_.size(); ++v)
      if (row_of_[v] >= 0) d[v] = x(row_of_[v]);
    return d;
  }

 private:
  const MeshManifold& mesh_;
  std::vector<Index> row_of_;
  Index n_;
  bool analyzed_ = false;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
};

inline double regularized_energy(const MeshManifold& mesh, const std::vector<double>& u,
                                 double p, double eps) {
  return dirichlet_energy(mesh, std::span<const double>(u), p, eps).value;
}

inline double max_abs_on(const std::vector<double>& g, const NodeMask& mask) {
  double r = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (mask[i]) r = std::max(r, std::abs(g[i]));
  return r;
}

}  // namespace detail

/// Minimizes the regularized energy over fields that agree with `start` on
/// its fixed nodes. `initial`, when given, is the starting iterate for the
/// free nodes; otherwise the harmonic (p = 2) extension is used.
inline SolveResult minimize_energy(const MeshManifold& mesh, const ScalarField& start,
                                   const SolverParams& params,
                                   std::span<const double> initial = {}) {
  params.validate();
  const Index nv = mesh.num_vertices();
  if (start.size() != nv || static_cast<Index>(start.fixed.size()) != nv)
    throw ParameterError("start field does not match the mesh");
  if (!initial.empty() && static_cast<Index>(initial.size()) != nv)
    throw ParameterError("initial iterate does not match the mesh");
  const double p = params.p;
  const double eps = params.epsilon;

  const auto mass = lumped_mass(mesh);
  const auto comps = detail::free_components(mesh, start, mass);
  NodeMask pinned(static_cast<std::size_t>(nv), 0);
  for (Index v : comps.pinned) pinned[static_cast<std::size_t>(v)] = 1;
  const NodeMask free_mask = complement(start.fixed);

  std::vector<Index> row_of(static_cast<std::size_t>(nv), -1);
  Index n = 0;
  for (Index v = 0; v < nv; ++v)
    if (!start.is_fixed(v) && !pinned[static_cast<std::size_t>(v)]) row_of[static_cast<std::size_t>(v)] = n++;

  std::vector<double> u = start.values;
  if (!initial.empty())
    for (Index v = 0; v < nv; ++v)
      if (!start.is_fixed(v)) u[static_cast<std::size_t>(v)] = initial[static_cast<std::size_t>(v)];

  SolveResult res;
  res.method = params.method;
  res.epsilon = eps;
  detail::ReducedSystem system(mesh, row_of, n);
  const std::vector<double> unit(static_cast<std::size_t>(mesh.num_elements()), 1.0);

  // The harmonic extension of the fixed data sets the energy scale of the
  // default tolerance, so a poor initial guess cannot loosen it.
  std::vector<double> harmonic = start.values;
  if (n > 0) {
    system.factorize(unit);
    auto g2 = detail::full_gradient(mesh, harmonic, 2.0, 0.0);
    auto d = system.direction(g2, 2.0);
    for (std::size_t i = 0; i < harmonic.size(); ++i) harmonic[i] += d[i];
  }
  detail::restore_means(comps, mass, harmonic);
  if (initial.empty()) {
    u = harmonic;
    if (n > 0) res.iterations = 1;
  }
  detail::restore_means(comps, mass, u);

  double energy = detail::regularized_energy(mesh, u, p, eps);
  res.energy_history.push_back(energy);
  const double scale = initial.empty() ? energy : detail::regularized_energy(mesh, harmonic, p, eps);
  res.tolerance = params.tol_residual.value_or(1e-8 * std::max(1.0, scale));

  bool gd_factored = false;
  std::vector<double> weights(static_cast<std::size_t>(mesh.num_elements()), 1.0);
  LocalVector ue;
  auto g = detail::full_gradient(mesh, u, p, eps);
  double residual = detail::max_abs_on(g, free_mask);

  while (n > 0 && residual > res.tolerance && res.iterations < params.max_iter) {
    if (params.method == Method::kIrls) {
      double wmax = 0.0;
      for (Index e = 0; e < mesh.num_elements(); ++e) {
        detail::gather(mesh, e, u, ue);
        const double sq = std::max(ue.dot(mesh.geometry(e).stiffness * ue), 0.0);
        double w = std::pow(sq + eps * eps, 0.5 * (p - 2.0));
        if (!std::isfinite(w)) w = std::numeric_limits<double>::max();
        weights[static_cast<std::size_t>(e)] = w;
        wmax = std::max(wmax, w);
      }
      const double floor = 1e-12 * wmax;
      for (auto& w : weights) w = std::max(w, floor);
      system.factorize(weights);
    } else if (!gd_factored) {
      system.factorize(unit);
      gd_factored = true;
    }
    auto d = system.direction(g, p);
    double slope = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) slope += g[i] * d[i];
    if (!(slope < 0.0)) break;

    std::vector<double> trial(u.size());
    auto step_to = [&](double alpha) {
      for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] + alpha * d[i];
      return detail::regularized_energy(mesh, trial, p, eps);
    };

    double alpha = params.damping;
    double accepted_alpha = 0.0, accepted_energy = energy;
    const double roundoff = 1e-12 * std::max(std::abs(energy), 1e-300);
    bool unresolved = false;
    for (int k = 0; k < 50; ++k, alpha *= 0.5) {
      const double e1 = step_to(alpha);
      if (e1 <= energy + 1e-4 * alpha * slope) {
        accepted_alpha = alpha;
        accepted_energy = e1;
        const double denom = e1 - energy - slope * alpha;
        if (denom > 0.0) {
          const double best = -slope * alpha * alpha / (2.0 * denom);
          if (best > 0.0 && best <= 4.0 * alpha && std::abs(best - alpha) > 0.05 * alpha) {
            const double e2 = step_to(best);
            if (e2 < e1) {
              accepted_alpha = best;
              accepted_energy = e2;
            }
          }
        }
        break;
      }
      if (std::abs(e1 - energy) <= roundoff) {
        unresolved = true;
        break;
      }
    }
    if (accepted_alpha == 0.0 && unresolved) {
      // Energy differences are lost in rounding. The energy is convex along
      // the line, so look for the sign change of its derivative instead.
      auto dphi = [&](double a) {
        for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] + a * d[i];
        auto gt = detail::full_gradient(mesh, trial, p, eps);
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) s += gt[i] * d[i];
        return s;
      };
      double lo = 0.0, hi = params.damping, flo = slope, fhi = dphi(hi);
      if (fhi <= 0.0) {
        accepted_alpha = hi;
      } else {
        accepted_alpha = 0.0;
        for (int k = 0; k < 60 && hi - lo > 1e-14 * hi; ++k) {
          double mid = lo - flo * (hi - lo) / (fhi - flo);
          if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
          const double fm = dphi(mid);
          if (std::abs(fm) <= 1e-6 * std::abs(slope)) {
            accepted_alpha = mid;
            break;
          }
          if (fm < 0.0) {
            lo = mid;
            flo = fm;
          } else {
            hi = mid;
            fhi = fm;
          }
          accepted_alpha = lo;
        }
      }
      if (accepted_alpha > 0.0) accepted_energy = std::min(step_to(accepted_alpha), energy);
    }
    if (accepted_alpha == 0.0) break;

    for (std::size_t i = 0; i < u.size(); ++i) u[i] += accepted_alpha * d[i];
    detail::restore_means(comps, mass, u);
    ++res.iterations;
    const double decrease = energy - accepted_energy;
    energy = accepted_energy;
    res.energy_history.push_back(energy);
    g = detail::full_gradient(mesh, u, p, eps);
    const double previous = residual;
    residual = detail::max_abs_on(g, free_mask);
    if (decrease < params.tol_energy * std::abs(energy) && residual > res.tolerance && residual >= previous) break;
  }

  res.residual = residual;
  res.converged = residual <= res.tolerance;
  res.field.values = std::move(u);
  res.field.fixed = start.fixed;
  res.field.provenance = ScalarField::Provenance::kSolverOutput;
  res.energy = dirichlet_energy(mesh, res.field, p, 0.0);
  return res;
}

/// Nodes held by the Dirichlet problem: the boundary and the truncation.
inline NodeMask dirichlet_mask(const MeshManifold& mesh) { return complement(interior_mask(mesh)); }

/// p-harmonic function with the values of h on the boundary (and on the
/// truncation when present).
inline SolveResult solve_dirichlet(const MeshManifold& mesh, const ScalarField& h,
                                   const SolverParams& params,
                                   std::span<const double> initial = {}) {
  if (h.size() != mesh.num_vertices()) throw ParameterError("data field does not match the mesh");
  ScalarField start;
  start.values = h.values;
  start.fixed = dirichlet_mask(mesh);
  if (std::none_of(start.fixed.begin(), start.fixed.end(), [](char c) { return c != 0; }))
    throw ParameterError("Dirichlet problem needs boundary or truncation nodes");
  return minimize_energy(mesh, start, params, initial);
}

/// Direct sparse LU solve of the p = 2 Dirichlet problem (no iteration).
inline SolveResult solve_p2_direct(const MeshManifold& mesh, const ScalarField& h) {
  const Index nv = mesh.num_vertices();
  if (h.size() != nv) throw ParameterError("data field does not match the mesh");
  const NodeMask fixed = dirichlet_mask(mesh);

  const auto ids = detail::component_ids(mesh);
  std::vector<char> constrained(static_cast<std::size_t>(nv), 0);
  for (Index v = 0; v < nv; ++v)
    if (fixed[static_cast<std::size_t>(v)]) constrained[static_cast<std::size_t>(ids[static_cast<std::size_t>(v)])] = 1;
  for (Index v = 0; v < nv; ++v)
    if (!constrained[static_cast<std::size_t>(ids[static_cast<std::size_t>(v)])])
      throw SolverError("singular system: the mesh component containing vertex " +
                        std::to_string(v) +
                        " has no boundary or truncation node to fix its values");

  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nv);
  for (Index v = 0; v < nv; ++v)
    if (fixed[static_cast<std::size_t>(v)]) {
      trip.emplace_back(v, v, 1.0);
      rhs(v) = h.values[static_cast<std::size_t>(v)];
    }
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    const auto& geo = mesh.geometry(e);
    LocalMatrix ke = geo.volume * (geo.grad.transpose() * geo.inverse_metric * geo.grad);
    auto s = mesh.simplex(e);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (fixed[static_cast<std::size_t>(s[i])]) continue;
      for (std::size_t j = 0; j < s.size(); ++j)
        trip.emplace_back(s[i], s[j], ke(static_cast<Index>(i), static_cast<Index>(j)));
    }
  }
  SparseMatrix a(nv, nv);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  Eigen::SparseLU<SparseMatrix> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw SolverError("sparse LU factorization failed");
  Eigen::VectorXd x = lu.solve(rhs);

  SolveResult res;
  res.field.values.assign(x.data(), x.data() + nv);
  for (Index v = 0; v < nv; ++v)
    if (fixed[static_cast<std::size_t>(v)]) res.field.values[static_cast<std::size_t>(v)] = h.values[static_cast<std::size_t>(v)];
  res.field.fixed = fixed;
  res.field.provenance = ScalarField::Provenance::kSolverOutput;
  res.energy = dirichlet_energy(mesh, res.field, 2.0, 0.0);
  res.energy_history = {res.energy.value};
  const NodeMask test = interior_mask(mesh);
  const bool any = std::any_of(test.begin(), test.end(), [](char c) { return c != 0; });
  res.residual = any ? weak_residual(mesh, res.field.view(), 2.0, test) : 0.0;
  res.tolerance = 1e-8 * std::max(1.0, res.energy.value);
  res.iterations = 1;
  res.converged = res.residual <= res.tolerance;
  return res;
}

/// Natural-boundary projection: v minimizes E(seed - phi) over phi vanishing
/// on the truncation, and w = seed - v is returned. w satisfies the weak
/// form for every test function that vanishes on the truncation only.
inline NeumannSolution solve_neumann_member(const MeshManifold& mesh, const ScalarField& seed,
                                            const SolverParams& params) {
  if (seed.size() != mesh.num_vertices()) throw ParameterError("seed does not match the mesh");
  for (double x : seed.values)
    if (!std::isfinite(x)) throw ParameterError("seed must be finite");
  ScalarField start;
  start.values = seed.values;
  start.fixed = mesh.truncation_mask();
  NeumannSolution out;
  out.result = minimize_energy(mesh, start, params);
  out.result.field.provenance = ScalarField::Provenance::kWitness;
  out.test_space = non_truncation_mask(mesh);
  out.full_residual = weak_residual(mesh, out.result.field.view(), params.p, out.test_space,
                                    params.epsilon);
  std::vector<double> v(seed.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = seed.values[i] - out.result.field.values[i];
  out.v = make_field(std::move(v), ScalarField::Provenance::kSolverOutput);
  return out;
}

/// True when the solve's energy does not exceed that of an admissible
/// candidate (same fixed values), up to `slack`.
inline bool certify_against(const MeshManifold& mesh, const SolveResult& r,
                            std::span<const double> candidate, double p, double slack = 1e-12) {
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    if (r.field.is_fixed(v) && candidate[static_cast<std::size_t>(v)] != r.field.values[static_cast<std::size_t>(v)])
      throw ParameterError("candidate is not admissible: it changes a fixed node");
  const double ec = dirichlet_energy(mesh, candidate, p).value;
  return r.energy.value <= ec + slack * std::max(1.0, ec);
}

inline nlohmann::ordered_json to_json(const SolveResult& r, bool with_values = true) {
  nlohmann::ordered_json j;
  if (with_values) j["values"] = r.field.values;
  j["energy"] = r.energy.value;
  j["p"] = r.energy.p;
  j["epsilon"] = r.epsilon;
  j["residual"] = r.residual;
  j["tolerance"] = r.tolerance;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["method"] = to_string(r.method);
  return j;
}

}  // namespace pcap
