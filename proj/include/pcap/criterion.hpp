#pragma once

// Existence criterion for the Dirichlet problem with bounded Dirichlet
// integral: the problem with data h is solvable when cap_{h-w}(dM) is finite
// for some w in the natural-boundary class. Only a finite witness family is
// searched, so a negative answer is reported as "no-witness-found-in-family".

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pcap/capacity.hpp"
#include "pcap/energy.hpp"
#include "pcap/mesh.hpp"
#include "pcap/solver.hpp"

namespace pcap {

struct WitnessFamily {
  /// Constant witnesses: min h, the capacity-minimizing constant, max h.
  bool constants = true;
  /// The natural-boundary projection of h itself.
  bool neumann = false;
  /// The zero witness (w = 0).
  bool zero = false;
  std::vector<std::pair<std::string, ScalarField>> fields;

  bool empty() const { return !constants && !neumann && !zero && fields.empty(); }
};

enum class Verdict { kFiniteWitnessFound, kNoWitnessFoundInFamily, kInconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kFiniteWitnessFound: return "finite-witness-found";
    case Verdict::kNoWitnessFoundInFamily: return "no-witness-found-in-family";
    case Verdict::kInconclusive: return "inconclusive";
  }
  return "inconclusive";
}

struct WitnessOutcome {
  std::string name;
  std::string kind;  // constant | zero | field | neumann
  std::optional<double> constant;
  ScalarField w;
  CapacitySequence sequence;
  GrowthDiagnostics growth;
  /// Residual of w over the full test space (Neumann witness only).
  std::optional<double> witness_residual;
};

/// The candidate solution u = u1 + w - u0 built from a finite witness.
struct AssembledSolution {
  ScalarField u;
  ScalarField u1;
  ScalarField u0;
  double energy = 0.0;
  double residual = 0.0;
  double tolerance = 0.0;
  bool converged = false;
  /// u equals h bit for bit on every boundary node.
  bool dirichlet_exact = false;
};

struct CriterionVerdict {
  Verdict verdict = Verdict::kInconclusive;
  std::string reason;
  std::vector<WitnessOutcome> witnesses;
  std::optional<std::size_t> best;
  /// Witness whose diagnostics headline the verdict: the best one, or else
  /// the one with the smallest final capacity.
  std::optional<std::size_t> headline;
  std::optional<AssembledSolution> solution;
  BoundednessRule rule;
  std::optional<double> c_star;
  int levels = 0;
};

namespace detail {

inline WitnessOutcome evaluate_witness(const MeshManifold& mesh, const ScalarField& h,
                                       const ExhaustionSequence& exh, const SolverParams& params,
                                       const BoundednessRule& rule, std::string name,
                                       std::string kind, ScalarField w) {
  WitnessOutcome out;
  out.name = std::move(name);
  out.kind = std::move(kind);
  std::vector<double> psi(h.values.size());
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = h.values[i] - w.values[i];
  out.w = std::move(w);
  out.sequence = capacity_closed(mesh, boundary_rule(), exh, psi, params, SequenceDirection::kDiagonal);
  const auto values = out.sequence.values();
  const auto sizes = out.sequence.sizes();
  out.growth = assess_growth(values, sizes, rule);
  return out;
}

inline AssembledSolution assemble_solution(const MeshManifold& mesh, const ScalarField& h,
                                           const WitnessOutcome& best,
                                           const SolverParams& params) {
  AssembledSolution s;
  const std::size_t nv = h.values.size();
  s.u1 = best.sequence.levels.back().estimate.minimizer;
  ScalarField data;
  data.values.resize(nv);
  for (std::size_t i = 0; i < nv; ++i) data.values[i] = s.u1.values[i] + best.w.values[i];
  for (Index v : mesh.boundary_nodes()) data.values[static_cast<std::size_t>(v)] = h.values[static_cast<std::size_t>(v)];
  data.provenance = ScalarField::Provenance::kData;
  SolveResult res = solve_dirichlet(mesh, data, params, data.values);
  s.u = res.field;
  std::vector<double> u0(nv);
  for (std::size_t i = 0; i < nv; ++i) u0[i] = data.values[i] - s.u.values[i];
  s.u0 = make_field(std::move(u0), ScalarField::Provenance::kSolverOutput);
  s.energy = res.energy.value;
  s.residual = res.residual;
  s.tolerance = res.tolerance;
  s.converged = res.converged;
  s.dirichlet_exact = true;
  for (Index v : mesh.boundary_nodes())
    s.dirichlet_exact = s.dirichlet_exact && s.u.values[static_cast<std::size_t>(v)] == h.values[static_cast<std::size_t>(v)];
  return s;
}

}  // namespace detail

inline CriterionVerdict criterion_check(const MeshManifold& mesh, const ScalarField& h,
                                        const ExhaustionSequence& exh, const SolverParams& params,
                                        const WitnessFamily& family,
                                        const BoundednessRule& rule = {}) {
  params.validate();
  if (h.size() != mesh.num_vertices()) throw ParameterError("h does not match the mesh");
  if (mesh.boundary_nodes().empty()) throw ParameterError("criterion needs a boundary");
  for (Index v : mesh.boundary_nodes())
    if (!std::isfinite(h.values[static_cast<std::size_t>(v)]))
      throw ParameterError("h must be finite on the boundary");
  if (family.empty()) throw ParameterError("witness family is empty");

  CriterionVerdict out;
  out.rule = rule;
  out.levels = static_cast<int>(exh.size());
  const std::size_t nv = h.values.size();
  auto constant = [&](double c) {
    return make_field(std::vector<double>(nv, c), ScalarField::Provenance::kWitness);
  };

  if (family.zero) {
    out.witnesses.push_back(
        detail::evaluate_witness(mesh, h, exh, params, rule, "zero", "zero", constant(0.0)));
    out.witnesses.back().constant = 0.0;
  }
  if (family.constants) {
    ConstantSearch search = witness_search_constants(mesh, h.values, exh, params);
    out.c_star = search.c_star;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index v : mesh.boundary_nodes()) {
      lo = std::min(lo, h.values[static_cast<std::size_t>(v)]);
      hi = std::max(hi, h.values[static_cast<std::size_t>(v)]);
    }
    std::vector<std::pair<std::string, double>> cs = {{"c_min", lo}, {"c_star", search.c_star}, {"c_max", hi}};
    for (const auto& [name, c] : cs) {
      WitnessOutcome o;
      if (name == "c_star") {
        o.name = name;
        o.kind = "constant";
        o.w = constant(c);
        o.sequence = search.sequence;
        const auto values = o.sequence.values();
        const auto sizes = o.sequence.sizes();
        o.growth = assess_growth(values, sizes, rule);
      } else {
        o = detail::evaluate_witness(mesh, h, exh, params, rule, name, "constant", constant(c));
      }
      o.constant = c;
      out.witnesses.push_back(std::move(o));
    }
  }
  for (const auto& [name, f] : family.fields) {
    if (f.size() != mesh.num_vertices()) throw ParameterError("witness field '" + name + "' does not match the mesh");
    ScalarField w = f;
    w.provenance = ScalarField::Provenance::kWitness;
    out.witnesses.push_back(detail::evaluate_witness(mesh, h, exh, params, rule, name, "field", std::move(w)));
  }
  if (family.neumann) {
    if (mesh.truncation_nodes().empty()) {
      // Without a truncation the projection of h is a constant; the constant
      // family already covers it.
      out.reason = "neumann witness skipped: no truncation nodes";
    } else {
      NeumannSolution ns = solve_neumann_member(mesh, h, params);
      ScalarField w = ns.result.field;
      out.witnesses.push_back(detail::evaluate_witness(mesh, h, exh, params, rule, "neumann", "neumann", std::move(w)));
      out.witnesses.back().witness_residual = ns.full_residual;
    }
  }

  if (exh.size() < 3) {
    out.verdict = Verdict::kInconclusive;
    out.reason = "exhaustion has fewer than 3 levels";
    return out;
  }
  bool all_diverge = !out.witnesses.empty();
  for (std::size_t i = 0; i < out.witnesses.size(); ++i) {
    const auto& o = out.witnesses[i];
    all_diverge = all_diverge && o.growth.growth == Growth::kDiverging;
    if (o.growth.growth != Growth::kBounded || o.sequence.levels.empty()) continue;
    if (!out.best || o.sequence.levels.back().estimate.value <
                         out.witnesses[*out.best].sequence.levels.back().estimate.value)
      out.best = i;
  }
  for (std::size_t i = 0; i < out.witnesses.size(); ++i) {
    if (out.witnesses[i].sequence.levels.empty()) continue;
    if (!out.headline || out.witnesses[i].sequence.levels.back().estimate.value <
                             out.witnesses[*out.headline].sequence.levels.back().estimate.value)
      out.headline = i;
  }
  if (out.best) out.headline = out.best;
  if (out.best) {
    out.verdict = Verdict::kFiniteWitnessFound;
    out.reason = "witness '" + out.witnesses[*out.best].name + "' gives a bounded capacity sequence";
    out.solution = detail::assemble_solution(mesh, h, out.witnesses[*out.best], params);
  } else if (all_diverge) {
    out.verdict = Verdict::kNoWitnessFoundInFamily;
    out.reason = "every witness in the family gives a diverging capacity sequence";
  } else {
    out.verdict = Verdict::kInconclusive;
    out.reason = "no witness is bounded and not every witness diverges";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const CriterionVerdict& v, bool with_fields = false) {
  nlohmann::ordered_json j;
  j["verdict"] = to_string(v.verdict);
  j["reason"] = v.reason;
  j["levels"] = v.levels;
  j["decision_rule"] = to_json(v.rule);
  if (v.c_star)
    j["c_star"] = *v.c_star;
  if (v.best) j["best_witness"] = v.witnesses[*v.best].name;
  if (v.headline) {
    j["headline_witness"] = v.witnesses[*v.headline].name;
    j["growth"] = to_json(v.witnesses[*v.headline].growth);
  }
  auto& ws = j["witnesses"];
  ws = nlohmann::ordered_json::array();
  for (const auto& o : v.witnesses) {
    nlohmann::ordered_json w;
    w["name"] = o.name;
    w["kind"] = o.kind;
    if (o.constant) w["constant"] = *o.constant;
    if (o.witness_residual) w["witness_residual"] = *o.witness_residual;
    w["growth"] = to_json(o.growth);
    w["sequence"] = to_json(o.sequence);
    ws.push_back(std::move(w));
  }
  if (v.solution) {
    nlohmann::ordered_json s;
    s["energy"] = v.solution->energy;
    s["residual"] = v.solution->residual;
    s["tolerance"] = v.solution->tolerance;
    s["converged"] = v.solution->converged;
    s["dirichlet_exact"] = v.solution->dirichlet_exact;
    if (with_fields) s["values"] = v.solution->u.values;
    j["solution"] = std::move(s);
  }
  return j;
}

/// Rows "level,size,capacity" for every witness, prefixed by its name.
inline std::string to_csv(const CriterionVerdict& v) {
  std::string out = "witness,level,size,capacity\n";
  char buf[128];
  for (const auto& o : v.witnesses)
    for (const auto& l : o.sequence.levels) {
      std::snprintf(buf, sizeof buf, ",%d,%.17g,%.17g\n", l.level, l.size, l.estimate.value);
      out += o.name + buf;
    }
  return out;
}

}  // namespace pcap
