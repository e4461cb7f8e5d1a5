#pragma once

// Weighted capacities cap_psi(K, Omega): the least p-Dirichlet energy over
// fields that equal psi on the node set K and vanish on every node outside
// the interior of Omega (zero extension), integrated over Omega. Closed sets
// are handled through sequences over an exhaustion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcap/energy.hpp"
#include "pcap/mesh.hpp"
#include "pcap/solver.hpp"

namespace pcap {

struct CapacityEstimate {
  double value = 0.0;
  NodeSet K;
  Region omega;
  ScalarField psi;
  ScalarField minimizer;
  double residual = 0.0;
  double tolerance = 0.0;
  int iterations = 0;
  bool converged = true;
  double epsilon = 0.0;
  bool empty_K = false;
};

/// Fixed-node pattern of the capacity problem for (K, Omega).
inline ScalarField capacity_start(const MeshManifold& mesh, const NodeSet& K,
                                  const Region& omega, std::span<const double> psi) {
  const Index nv = mesh.num_vertices();
  ScalarField start;
  start.values.assign(static_cast<std::size_t>(nv), 0.0);
  start.fixed.assign(static_cast<std::size_t>(nv), 1);
  for (Index v : interior_nodes(mesh, omega))
    if (!mesh.is_truncation(v)) start.fixed[static_cast<std::size_t>(v)] = 0;
  for (Index v : K) {
    start.fixed[static_cast<std::size_t>(v)] = 1;
    start.values[static_cast<std::size_t>(v)] = psi[static_cast<std::size_t>(v)];
  }
  return start;
}

inline CapacityEstimate capacity_compact(const MeshManifold& mesh, NodeSet K, const Region& omega,
                                         std::span<const double> psi,
                                         const SolverParams& params) {
  params.validate();
  if (static_cast<Index>(psi.size()) != mesh.num_vertices())
    throw ParameterError("psi does not match the mesh");
  K = normalized(std::move(K));
  const NodeMask in_omega = mask_of(omega.nodes, mesh.num_vertices());
  for (Index v : K) {
    if (v < 0 || v >= mesh.num_vertices()) throw ParameterError("K references vertex out of range");
    if (!in_omega[static_cast<std::size_t>(v)])
      throw ParameterError("K must lie in the closure of Omega");
    if (!std::isfinite(psi[static_cast<std::size_t>(v)])) throw ParameterError("psi must be finite on K");
  }

  CapacityEstimate est;
  est.K = K;
  est.omega = omega;
  est.psi = make_field(std::vector<double>(psi.begin(), psi.end()));
  est.epsilon = params.epsilon;
  ScalarField start = capacity_start(mesh, K, omega, psi);
  if (K.empty()) {
    est.empty_K = true;
    est.minimizer = std::move(start);
    est.minimizer.provenance = ScalarField::Provenance::kSolverOutput;
    return est;
  }
  SolveResult res = minimize_energy(mesh, start, params);
  est.residual = res.residual;
  est.tolerance = res.tolerance;
  est.iterations = res.iterations;
  est.converged = res.converged;
  est.minimizer = std::move(res.field);
  est.value = dirichlet_energy(mesh, est.minimizer, params.p, 0.0, &omega).value;
  return est;
}

/// Picks the nodes of a closed set that lie in the closure of a region.
using ClosedSetRule = std::function<NodeSet(const MeshManifold&, const Region&)>;

/// The manifold boundary intersected with the closure of the region.
inline ClosedSetRule boundary_rule() {
  return [](const MeshManifold& mesh, const Region& region) {
    NodeSet out;
    for (Index v : region.nodes)
      if (mesh.is_boundary(v)) out.push_back(v);
    return out;
  };
}

/// A labeled node set intersected with the closure of the region.
inline ClosedSetRule label_rule(std::string label) {
  return [label](const MeshManifold& mesh, const Region& region) {
    const NodeSet& set = mesh.node_label(label);
    NodeSet out;
    std::set_intersection(set.begin(), set.end(), region.nodes.begin(), region.nodes.end(),
                          std::back_inserter(out));
    return out;
  };
}

enum class SequenceDirection { kGrowingK, kGrowingOmega, kDiagonal };

inline const char* to_string(SequenceDirection d) {
  switch (d) {
    case SequenceDirection::kGrowingK: return "growing-K";
    case SequenceDirection::kGrowingOmega: return "growing-Omega";
    case SequenceDirection::kDiagonal: return "diagonal";
  }
  return "diagonal";
}

struct CapacityLevel {
  int level = 0;
  double size = 0.0;  // exhaustion threshold of the level
  CapacityEstimate estimate;
};

struct CapacitySequence {
  std::vector<CapacityLevel> levels;
  SequenceDirection direction = SequenceDirection::kDiagonal;
  /// Largest violation of the expected monotonicity (0 for the diagonal).
  double max_violation = 0.0;
  bool monotone = true;
  std::vector<std::string> warnings;

  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& l : levels) v.push_back(l.estimate.value);
    return v;
  }
  std::vector<double> sizes() const {
    std::vector<double> v;
    for (const auto& l : levels) v.push_back(l.size);
    return v;
  }
};

/// Capacities of the closed set along an exhaustion:
///  growing-K:     cap(E cap Omega_i, Omega_last), non-decreasing;
///  growing-Omega: cap(E cap Omega_1, Omega_i), non-increasing;
///  diagonal:      cap(E cap Omega_i, Omega_i).
inline CapacitySequence capacity_closed(const MeshManifold& mesh, const ClosedSetRule& rule,
                                        const ExhaustionSequence& exh,
                                        std::span<const double> psi, const SolverParams& params,
                                        SequenceDirection direction = SequenceDirection::kGrowingK,
                                        double monotone_slack = 1e-8) {
  CapacitySequence seq;
  seq.direction = direction;
  NodeSet first_k;
  for (std::size_t i = 0; i < exh.levels.size(); ++i) {
    const Region& level = exh.levels[i];
    NodeSet K = rule(mesh, level);
    if (K.empty()) {
      seq.warnings.push_back("level " + std::to_string(i) + " contains no node of the set; skipped");
      continue;
    }
    if (first_k.empty()) first_k = K;
    const Region& omega = direction == SequenceDirection::kGrowingK ? exh.last() : level;
    const NodeSet& k_used = direction == SequenceDirection::kGrowingOmega ? first_k : K;
    CapacityLevel cl;
    cl.level = static_cast<int>(i);
    cl.size = exh.thresholds[i];
    cl.estimate = capacity_compact(mesh, k_used, omega, psi, params);
    if (!cl.estimate.converged)
      seq.warnings.push_back("level " + std::to_string(i) + " solve did not converge");
    seq.levels.push_back(std::move(cl));
  }
  if (direction != SequenceDirection::kDiagonal) {
    for (std::size_t i = 1; i < seq.levels.size(); ++i) {
      const double prev = seq.levels[i - 1].estimate.value;
      const double cur = seq.levels[i].estimate.value;
      const double viol = direction == SequenceDirection::kGrowingK ? prev - cur : cur - prev;
      seq.max_violation = std::max(seq.max_violation, viol);
    }
    seq.monotone = seq.max_violation <= monotone_slack * std::max(1.0, seq.levels.empty() ? 1.0 : std::abs(seq.levels.back().estimate.value));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Boundedness decision rule

struct BoundednessRule {
  double bounded_relative_change = 0.01;
  double diverging_growth = 0.10;
  double diverging_slope = 0.5;
  int window = 3;
  /// Relative slack when deciding that the tail is non-increasing.
  double monotone_slack = 1e-8;
};

enum class Growth { kBounded, kDiverging, kInconclusive };

inline const char* to_string(Growth g) {
  switch (g) {
    case Growth::kBounded: return "bounded";
    case Growth::kDiverging: return "diverging";
    case Growth::kInconclusive: return "inconclusive";
  }
  return "inconclusive";
}

struct GrowthDiagnostics {
  Growth growth = Growth::kInconclusive;
  /// Largest relative change between consecutive values of the last window.
  double last_relative_change = 0.0;
  /// Least-squares slope of log(value) against log(size).
  double fitted_exponent = std::numeric_limits<double>::quiet_NaN();
  bool non_increasing_tail = false;
  std::string reason;
};

/// Bounded: the last `window` values change by less than the relative
/// threshold, or they are non-increasing (a non-increasing sequence of
/// non-negative numbers is bounded by its first term). Diverging: each of the
/// last `window` steps grows by more than `diverging_growth` and the log-log
/// slope exceeds `diverging_slope`. Anything else is inconclusive.
inline GrowthDiagnostics assess_growth(std::span<const double> values,
                                       std::span<const double> sizes,
                                       const BoundednessRule& rule = {}) {
  GrowthDiagnostics d;
  const std::size_t n = values.size();
  if (n < 3 || static_cast<int>(n) < rule.window) {
    d.reason = "fewer than 3 levels";
    return d;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(values[i] > 0.0) || !(sizes[i] > 0.0)) continue;
    const double x = std::log(sizes[i]), y = std::log(values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m >= 2 && m * sxx - sx * sx > 0.0) d.fitted_exponent = (m * sxy - sx * sy) / (m * sxx - sx * sx);

  const std::size_t w = static_cast<std::size_t>(rule.window);
  const std::size_t first = n - w;
  bool non_increasing = true;
  for (std::size_t i = first + 1; i < n; ++i) {
    const double rel = std::abs(values[i] - values[i - 1]) / std::max(std::abs(values[i]), 1e-300);
    d.last_relative_change = std::max(d.last_relative_change, std::abs(values[i]) == 0.0 && values[i - 1] == 0.0 ? 0.0 : rel);
    non_increasing = non_increasing &&
                     values[i] <= values[i - 1] + rule.monotone_slack * std::max(1.0, std::abs(values[i - 1]));
  }
  d.non_increasing_tail = non_increasing;
  if (d.last_relative_change < rule.bounded_relative_change) {
    d.growth = Growth::kBounded;
    d.reason = "relative change over the last levels below threshold";
    return d;
  }
  if (non_increasing) {
    d.growth = Growth::kBounded;
    d.reason = "non-increasing over the last levels";
    return d;
  }
  // Growth over the last `window` steps (as many as the sequence provides).
  const std::size_t steps = std::min(w, n - 1);
  bool grows = true;
  for (std::size_t i = n - steps; i < n; ++i)
    grows = grows && values[i - 1] > 0.0 && values[i] > (1.0 + rule.diverging_growth) * values[i - 1];
  if (grows && std::isfinite(d.fitted_exponent) && d.fitted_exponent > rule.diverging_slope) {
    d.growth = Growth::kDiverging;
    d.reason = "sustained growth with log-log slope above threshold";
    return d;
  }
  d.reason = "neither settled nor growing";
  return d;
}

// ---------------------------------------------------------------------------
// Constant witnesses

struct ConstantSearch {
  double c_star = 0.0;
  double value_at_c_star = 0.0;
  int evaluations = 0;
  CapacitySequence sequence;  // diagonal sequence for h - c*
};

inline std::vector<double> shifted(std::span<const double> h, double c) {
  std::vector<double> out(h.begin(), h.end());
  for (auto& x : out) x -= c;
  return out;
}

/// Golden-section minimization of c -> cap_{h-c}(K_last, Omega_last)^{1/p}
/// over [min h, max h] on the closed set's nodes. Constants solve the
/// natural-boundary problem, and the map is convex by homogeneity and the
/// triangle inequality for cap^{1/p}.
inline ConstantSearch witness_search_constants(const MeshManifold& mesh,
                                               std::span<const double> h,
                                               const ExhaustionSequence& exh,
                                               const SolverParams& params,
                                               const ClosedSetRule& rule = boundary_rule(),
                                               double rel_tol = 1e-6) {
  const Region& omega = exh.last();
  const NodeSet K = rule(mesh, omega);
  if (K.empty()) throw ParameterError("closed set has no nodes in the last level");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index v : K) {
    const double x = h[static_cast<std::size_t>(v)];
    if (!std::isfinite(x)) throw ParameterError("h must be finite on the closed set");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  ConstantSearch out;
  auto objective = [&](double c) {
    ++out.evaluations;
    auto psi = shifted(h, c);
    return std::pow(capacity_compact(mesh, K, omega, psi, params).value, 1.0 / params.p);
  };
  if (hi - lo <= 1e-14 * std::max(1.0, std::abs(hi))) {
    out.c_star = lo;
  } else {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = objective(x1), f2 = objective(x2);
    while (b - a > rel_tol * (hi - lo)) {
      if (f1 <= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - phi * (b - a);
        f1 = objective(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + phi * (b - a);
        f2 = objective(x2);
      }
    }
    out.c_star = f1 <= f2 ? x1 : x2;
  }
  auto psi = shifted(h, out.c_star);
  out.sequence = capacity_closed(mesh, rule, exh, psi, params, SequenceDirection::kDiagonal);
  out.value_at_c_star = out.sequence.levels.empty() ? 0.0 : out.sequence.levels.back().estimate.value;
  return out;
}

inline nlohmann::ordered_json to_json(const CapacityEstimate& e, bool with_minimizer = false) {
  nlohmann::ordered_json j;
  j["value"] = e.value;
  j["K_size"] = e.K.size();
  j["region"] = e.omega.name;
  j["epsilon"] = e.epsilon;
  j["residual"] = e.residual;
  j["tolerance"] = e.tolerance;
  j["iterations"] = e.iterations;
  j["converged"] = e.converged;
  j["empty_K"] = e.empty_K;
  if (with_minimizer) j["minimizer"] = e.minimizer.values;
  return j;
}

inline nlohmann::ordered_json to_json(const CapacitySequence& s) {
  nlohmann::ordered_json j;
  j["direction"] = to_string(s.direction);
  j["monotone"] = s.monotone;
  j["max_violation"] = s.max_violation;
  auto& lv = j["levels"];
  lv = nlohmann::ordered_json::array();
  for (const auto& l : s.levels) {
    nlohmann::ordered_json row;
    row["level"] = l.level;
    row["size"] = l.size;
    row["capacity"] = l.estimate.value;
    row["K_size"] = l.estimate.K.size();
    row["residual"] = l.estimate.residual;
    row["tolerance"] = l.estimate.tolerance;
    row["converged"] = l.estimate.converged;
    lv.push_back(std::move(row));
  }
  j["warnings"] = s.warnings;
  return j;
}

inline nlohmann::ordered_json to_json(const BoundednessRule& r) {
  nlohmann::ordered_json j;
  j["bounded_relative_change"] = r.bounded_relative_change;
  j["diverging_growth"] = r.diverging_growth;
  j["diverging_slope"] = r.diverging_slope;
  j["window"] = r.window;
  j["monotone_slack"] = r.monotone_slack;
  return j;
}

inline nlohmann::ordered_json to_json(const GrowthDiagnostics& d) {
  nlohmann::ordered_json j;
  j["growth"] = to_string(d.growth);
  j["last_relative_change"] = d.last_relative_change;
  if (std::isfinite(d.fitted_exponent))
    j["fitted_exponent"] = d.fitted_exponent;
  else
    j["fitted_exponent"] = nullptr;
  j["non_increasing_tail"] = d.non_increasing_tail;
  j["reason"] = d.reason;
  return j;
}

}  // namespace pcap
