#pragma once

// Poincare constants on a region G with a subset omega:
//   integral form:  int_G |u|^p <= C (int_G |grad u|^p + |int_omega u|^p)
//   mean form:      int_G |u - a|^p <= C int_G |grad u|^p,  a = mean of u over omega
// For p = 2 the constant over the discrete space is the reciprocal of the
// smallest eigenvalue of a constrained pencil and is computed by inverse
// iteration. Other exponents are maximized by preconditioned ascent, which
// can only under-estimate the constant.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcap/energy.hpp"
#include "pcap/mesh.hpp"

namespace pcap {

enum class PoincareForm { kIntegral, kMean };

inline const char* to_string(PoincareForm f) { return f == PoincareForm::kIntegral ? "integral" : "mean"; }

struct PoincareEstimate {
  double constant = 0.0;
  double p = 2.0;
  std::string region;
  std::string omega;
  PoincareForm form = PoincareForm::kMean;
  /// Mean over omega of the extremal field (0 for the mean form).
  double alpha = 0.0;
  bool certified = false;
  std::string label;
  /// Relative change of the last iteration.
  double tolerance = 0.0;
  int iterations = 0;
  std::vector<double> extremal;  // extremal field on all vertices (0 outside G)
};

/// Both sides of the inequality for a field: lhs <= constant * rhs.
struct PoincareSides {
  double lhs = 0.0;
  double rhs = 0.0;
};

namespace detail {

struct LocalSpace {
  std::vector<Index> nodes;     // global ids of G's nodes
  std::vector<Index> local_of;  // global -> local, -1 outside
};

inline LocalSpace local_space(const MeshManifold& mesh, const Region& G) {
  LocalSpace s;
  s.nodes = G.nodes;
  s.local_of.assign(static_cast<std::size_t>(mesh.num_vertices()), -1);
  for (std::size_t i = 0; i < s.nodes.size(); ++i) s.local_of[static_cast<std::size_t>(s.nodes[i])] = static_cast<Index>(i);
  return s;
}

inline SparseMatrix restrict_matrix(const SparseMatrix& a, const LocalSpace& s) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < a.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
      const Index i = s.local_of[static_cast<std::size_t>(it.row())];
      const Index j = s.local_of[static_cast<std::size_t>(it.col())];
      if (i >= 0 && j >= 0) trip.emplace_back(i, j, it.value());
    }
  const auto n = static_cast<Index>(s.nodes.size());
  SparseMatrix out(n, n);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

inline Eigen::VectorXd omega_weights(const MeshManifold& mesh, const Region& omega,
                                     const LocalSpace& s) {
  auto m = lumped_mass(mesh, &omega.elements);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Index>(s.nodes.size()));
  for (std::size_t i = 0; i < s.nodes.size(); ++i) b(static_cast<Index>(i)) = m[static_cast<std::size_t>(s.nodes[i])];
  return b;
}

// Local p-energy over G and its gradient.
inline double local_energy(const MeshManifold& mesh, const Region& G, const std::vector<double>& u,
                           double p, std::vector<double>* grad) {
  double e = 0.0;
  LocalVector ue;
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  for (Index el : G.elements) {
    gather(mesh, el, u, ue);
    const auto& geo = mesh.geometry(el);
    LocalVector su = geo.stiffness * ue;
    const double sq = std::max(ue.dot(su), 0.0);
    e += geo.volume * density(sq, p, 0.0);
    if (!grad) continue;
    const double k = geo.volume * flux_factor(sq, p, 0.0);
    auto sv = mesh.simplex(el);
    for (std::size_t i = 0; i < sv.size(); ++i) (*grad)[static_cast<std::size_t>(sv[i])] += k * su(static_cast<Index>(i));
  }
  return e;
}

inline PoincareEstimate poincare_p2(const MeshManifold& mesh, const Region& G, const Region& omega,
                                    PoincareForm form, PoincareEstimate est) {
  const LocalSpace s = local_space(mesh, G);
  const auto n = static_cast<Index>(s.nodes.size());
  const SparseMatrix K = restrict_matrix(assemble_stiffness(mesh, {}, &G.elements), s);
  const SparseMatrix M = restrict_matrix(assemble_mass(mesh, &G.elements), s);
  const Eigen::VectorXd b = omega_weights(mesh, omega, s);

  // [K b; b^T c] with c = -1 (integral form: K + b b^T) or 0 (constraint b^T x = 0).
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < K.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(K, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  for (Index i = 0; i < n; ++i)
    if (b(i) != 0.0) {
      trip.emplace_back(i, n, b(i));
      trip.emplace_back(n, i, b(i));
    }
  if (form == PoincareForm::kIntegral) trip.emplace_back(n, n, -1.0);
  SparseMatrix A(n + 1, n + 1);
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();
  Eigen::SparseLU<SparseMatrix> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success) throw SolverError("Poincare system factorization failed");

  auto quotient = [&](const Eigen::VectorXd& x) {
    double top = x.dot(K * x);
    if (form == PoincareForm::kIntegral) top += std::pow(b.dot(x), 2);
    return top / x.dot(M * x);
  };

  // Deterministic start with components along many modes.
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) {
    const Point& pt = mesh.vertex(s.nodes[static_cast<std::size_t>(i)]);
    double v = 1.0 + 0.1 * std::sin(1.0 + 7.3 * i);
    for (Index d = 0; d < pt.size(); ++d) v += (0.7 + 0.2 * d) * pt(d);
    x(i) = v;
  }
  double lambda = 0.0, change = 1.0;
  Eigen::VectorXd rhs(n + 1);
  int it = 0;
  for (; it < 1000; ++it) {
    rhs.head(n) = M * x;
    rhs(n) = 0.0;
    Eigen::VectorXd y = lu.solve(rhs);
    x = y.head(n);
    x /= std::sqrt(x.dot(M * x));
    const double next = quotient(x);
    change = it == 0 ? 1.0 : std::abs(next - lambda) / next;
    lambda = next;
    if (it > 2 && change < 1e-12) break;
  }
  est.iterations = it + 1;
  est.tolerance = change;
  est.constant = 1.0 / lambda;
  est.certified = true;
  est.label = "certified";
  est.extremal.assign(static_cast<std::size_t>(mesh.num_vertices()), 0.0);
  for (Index i = 0; i < n; ++i) est.extremal[static_cast<std::size_t>(s.nodes[static_cast<std::size_t>(i)])] = x(i);
  const double om = b.sum();
  est.alpha = om > 0.0 ? b.dot(x) / om : 0.0;
  return est;
}

}  // namespace detail

/// Evaluates both sides of the inequality for `u`.
inline PoincareSides poincare_sides(const MeshManifold& mesh, std::span<const double> u, double p,
                                    const Region& G, const Region& omega, PoincareForm form) {
  std::vector<double> v(u.begin(), u.end());
  auto m_omega = lumped_mass(mesh, &omega.elements);
  double om = 0.0, iu = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    om += m_omega[i];
    iu += m_omega[i] * v[i];
  }
  PoincareSides sides;
  sides.rhs = detail::local_energy(mesh, G, v, p, nullptr);
  if (form == PoincareForm::kMean) {
    for (auto& x : v) x -= iu / om;
  } else {
    sides.rhs += std::pow(std::abs(iu), p);
  }
  if (p == 2.0) {
    const SparseMatrix M = assemble_mass(mesh, &G.elements);
    Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Index>(v.size()));
    sides.lhs = x.dot(M * x);
  } else {
    auto m = lumped_mass(mesh, &G.elements);
    for (std::size_t i = 0; i < v.size(); ++i) sides.lhs += m[i] * std::pow(std::abs(v[i]), p);
  }
  return sides;
}

inline PoincareEstimate poincare_constant(const MeshManifold& mesh, double p, const Region& G,
                                          const Region& omega,
                                          PoincareForm form = PoincareForm::kMean,
                                          int max_iter = 400) {
  check_exponent(p);
  if (G.empty()) throw ParameterError("region G is empty");
  if (!std::includes(G.elements.begin(), G.elements.end(), omega.elements.begin(), omega.elements.end()))
    throw ParameterError("omega must be a subset of G");
  if (!(volume(mesh, omega).value > 0.0)) throw ParameterError("omega has zero measure");

  PoincareEstimate est;
  est.p = p;
  est.region = G.name;
  est.omega = omega.name;
  est.form = form;
  est = detail::poincare_p2(mesh, G, omega, form, est);
  if (p == 2.0) return est;

  // Ascent on log Q(u) = log N(u) - log D(u), preconditioned by K + M on G
  // and started from the p = 2 extremal.
  const auto s = detail::local_space(mesh, G);
  const auto n = static_cast<Index>(s.nodes.size());
  const SparseMatrix P = detail::restrict_matrix(
      SparseMatrix(assemble_stiffness(mesh, {}, &G.elements) + assemble_mass(mesh, &G.elements)), s);
  Eigen::SimplicialLDLT<SparseMatrix> pre(P);
  if (pre.info() != Eigen::Success) throw SolverError("Poincare preconditioner factorization failed");
  const auto m = lumped_mass(mesh, &G.elements);
  const auto mw = lumped_mass(mesh, &omega.elements);
  double om = 0.0;
  for (double x : mw) om += x;

  auto project = [&](std::vector<double>& u) {
    if (form != PoincareForm::kMean) return;
    double a = 0.0;
    for (Index v : s.nodes) a += mw[static_cast<std::size_t>(v)] * u[static_cast<std::size_t>(v)];
    a /= om;
    for (Index v : s.nodes) u[static_cast<std::size_t>(v)] -= a;
  };
  std::vector<double> gd(static_cast<std::size_t>(mesh.num_vertices()));
  // log Q and its gradient (global arrays, zero outside G).
  auto eval = [&](const std::vector<double>& u, std::vector<double>* grad) {
    double N = 0.0;
    for (Index v : s.nodes) N += m[static_cast<std::size_t>(v)] * std::pow(std::abs(u[static_cast<std::size_t>(v)]), p);
    double D = detail::local_energy(mesh, G, u, p, grad ? &gd : nullptr);
    double iu = 0.0;
    if (form == PoincareForm::kIntegral) {
      for (Index v : s.nodes) iu += mw[static_cast<std::size_t>(v)] * u[static_cast<std::size_t>(v)];
      D += std::pow(std::abs(iu), p);
    }
    if (grad) {
      grad->assign(u.size(), 0.0);
      const double ti = p * std::pow(std::abs(iu), p - 1.0) * (iu < 0 ? -1.0 : 1.0);
      for (Index v : s.nodes) {
        const auto k = static_cast<std::size_t>(v);
        const double dn = p * m[k] * std::pow(std::abs(u[k]), p - 1.0) * (u[k] < 0 ? -1.0 : 1.0);
        double dd = gd[k];
        if (form == PoincareForm::kIntegral) dd += ti * mw[k];
        (*grad)[k] = dn / N - dd / D;
      }
    }
    return std::log(N) - std::log(D);
  };

  std::vector<double> u = est.extremal;
  project(u);
  std::vector<double> g(u.size());
  double f = eval(u, &g);
  double step = 1.0, change = 1.0;
  int it = 0;
  for (; it < max_iter; ++it) {
    Eigen::VectorXd rhs(n);
    for (Index i = 0; i < n; ++i) rhs(i) = g[static_cast<std::size_t>(s.nodes[static_cast<std::size_t>(i)])];
    Eigen::VectorXd d = pre.solve(rhs);
    const double slope = rhs.dot(d);
    if (!(slope > 0.0)) break;
    bool accepted = false;
    std::vector<double> trial = u;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(s.nodes[static_cast<std::size_t>(i)]);
        trial[k] = u[k] + step * d(i);
      }
      project(trial);
      const double ft = eval(trial, nullptr);
      if (std::isfinite(ft) && ft >= f + 1e-4 * step * slope) {
        change = ft - f;
        u.swap(trial);
        f = eval(u, &g);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    step = std::min(1.0, 2.0 * step);
    if (change < 1e-12) break;
  }
  est.constant = std::exp(f);
  est.iterations += it;
  est.tolerance = change;
  est.certified = false;
  est.label = "lower bound estimate";
  est.extremal = u;
  double a = 0.0;
  for (Index v : s.nodes) a += mw[static_cast<std::size_t>(v)] * u[static_cast<std::size_t>(v)];
  est.alpha = a / om;
  return est;
}

inline nlohmann::ordered_json to_json(const PoincareEstimate& e) {
  nlohmann::ordered_json j;
  j["value"] = e.constant;
  j["p"] = e.p;
  j["epsilon"] = 0.0;
  j["region"] = e.region;
  j["omega"] = e.omega;
  j["form"] = to_string(e.form);
  j["alpha"] = e.alpha;
  j["certified"] = e.certified;
  j["label"] = e.label;
  j["tolerance"] = e.tolerance;
  j["iterations"] = e.iterations;
  return j;
}

}  // namespace pcap
