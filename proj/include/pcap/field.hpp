#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcap/mesh.hpp"

namespace pcap {

/// Nodal values of a piecewise-linear function plus a per-node constraint
/// flag. Fixed nodes are never modified by a solver.
struct ScalarField {
  enum class Provenance { kData, kSolverOutput, kWitness };

  std::vector<double> values;
  NodeMask fixed;
  Provenance provenance = Provenance::kData;

  Index size() const noexcept { return static_cast<Index>(values.size()); }
  std::span<const double> view() const noexcept { return values; }
  bool is_fixed(Index v) const { return fixed[static_cast<std::size_t>(v)] != 0; }
};

inline const char* to_string(ScalarField::Provenance p) {
  switch (p) {
    case ScalarField::Provenance::kData: return "data";
    case ScalarField::Provenance::kSolverOutput: return "solver_output";
    case ScalarField::Provenance::kWitness: return "witness";
  }
  return "data";
}

inline ScalarField make_field(std::vector<double> values,
                              ScalarField::Provenance p = ScalarField::Provenance::kData) {
  ScalarField f;
  f.fixed.assign(values.size(), 0);
  f.values = std::move(values);
  f.provenance = p;
  return f;
}

inline ScalarField constant_field(const MeshManifold& mesh, double c) {
  return make_field(std::vector<double>(static_cast<std::size_t>(mesh.num_vertices()), c));
}

/// Samples a function of the chart coordinates at every vertex.
inline ScalarField sample_field(const MeshManifold& mesh,
                                const std::function<double(const Point&)>& fn) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(mesh.num_vertices()));
  for (const auto& x : mesh.vertices()) v.push_back(fn(x));
  return make_field(std::move(v));
}

/// Nodes that are neither on the boundary nor on the truncation.
inline NodeMask interior_mask(const MeshManifold& mesh) {
  NodeMask m(static_cast<std::size_t>(mesh.num_vertices()), 0);
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    m[static_cast<std::size_t>(v)] = !mesh.is_boundary(v) && !mesh.is_truncation(v);
  return m;
}

/// Every node except the outer truncation: the test space of the natural
/// boundary problem.
inline NodeMask non_truncation_mask(const MeshManifold& mesh) {
  NodeMask m(static_cast<std::size_t>(mesh.num_vertices()), 0);
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    m[static_cast<std::size_t>(v)] = !mesh.is_truncation(v);
  return m;
}

inline NodeMask complement(const NodeMask& m) {
  NodeMask c(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) c[i] = !m[i];
  return c;
}

}  // namespace pcap
