#pragma once

// Discretized Riemannian manifolds with boundary: simplicial meshes carrying a
// constant metric tensor per element, the boundary of the manifold, an
// artificial truncation boundary for non-compact models, and named node and
// element sets.
//
// Gradients are those of the piecewise-linear interpolant, so every integral
// of a function of |grad u| is computed exactly element by element.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcap/types.hpp"

namespace pcap {

/// Metric tensor as a function of a chart point (sampled at barycenters).
using MetricFunction = std::function<Metric(const Point&)>;

/// Everything needed to build a mesh. Metrics may be given per element,
/// through a generator, or omitted (identity).
struct MeshDescription {
  int dim = 2;
  std::vector<Point> vertices;
  std::vector<std::vector<Index>> simplices;
  std::vector<Metric> metrics;
  MetricFunction metric_fn;
  /// Per-axis chart period; 0 means the axis is not identified.
  std::vector<double> periods;
  NodeSet boundary_nodes;
  NodeSet truncation_nodes;
  std::map<std::string, NodeSet> node_labels;
  std::map<std::string, std::vector<Index>> element_labels;
};

/// Cached per-element quantities.
struct ElementGeometry {
  GradOperator grad;       // chart gradients of the d+1 hat functions (columns)
  Metric inverse_metric;   // g^{ij}
  LocalMatrix stiffness;   // grad^T g^{-1} grad, so |grad u|^2 = u_e^T S u_e
  double chart_volume = 0.0;
  double volume = 0.0;     // chart_volume * sqrt(det g)
};

class MeshManifold;
MeshManifold build_mesh(MeshDescription desc);

class MeshManifold {
 public:
  int dim() const noexcept { return dim_; }
  Index num_vertices() const noexcept { return static_cast<Index>(vertices_.size()); }
  Index num_elements() const noexcept { return static_cast<Index>(geometry_.size()); }
  int nodes_per_element() const noexcept { return dim_ + 1; }

  const Point& vertex(Index v) const { return vertices_[static_cast<std::size_t>(v)]; }
  const std::vector<Point>& vertices() const noexcept { return vertices_; }

  std::span<const Index> simplex(Index e) const {
    return {simplices_.data() + static_cast<std::size_t>(e) * (dim_ + 1),
            static_cast<std::size_t>(dim_ + 1)};
  }

  const Metric& metric(Index e) const { return metrics_[static_cast<std::size_t>(e)]; }
  const ElementGeometry& geometry(Index e) const {
    return geometry_[static_cast<std::size_t>(e)];
  }

  const NodeSet& boundary_nodes() const noexcept { return boundary_; }
  const NodeSet& truncation_nodes() const noexcept { return truncation_; }
  const NodeMask& boundary_mask() const noexcept { return boundary_mask_; }
  const NodeMask& truncation_mask() const noexcept { return truncation_mask_; }
  bool is_boundary(Index v) const { return boundary_mask_[static_cast<std::size_t>(v)] != 0; }
  bool is_truncation(Index v) const {
    return truncation_mask_[static_cast<std::size_t>(v)] != 0;
  }

  const std::map<std::string, NodeSet>& node_labels() const noexcept { return node_labels_; }
  const std::map<std::string, std::vector<Index>>& element_labels() const noexcept {
    return element_labels_;
  }
  const NodeSet& node_label(const std::string& name) const {
    auto it = node_labels_.find(name);
    if (it == node_labels_.end()) throw MeshError("unknown node label '" + name + "'");
    return it->second;
  }
  const std::vector<Index>& element_label(const std::string& name) const {
    auto it = element_labels_.find(name);
    if (it == element_labels_.end()) throw MeshError("unknown element label '" + name + "'");
    return it->second;
  }

  /// Elements incident to vertex v, ascending.
  std::span<const Index> elements_of(Index v) const {
    auto b = static_cast<std::size_t>(vertex_elem_offsets_[static_cast<std::size_t>(v)]);
    auto e = static_cast<std::size_t>(vertex_elem_offsets_[static_cast<std::size_t>(v) + 1]);
    return {vertex_elems_.data() + b, e - b};
  }

  const std::vector<double>& periods() const noexcept { return periods_; }
  const MetricFunction& metric_function() const noexcept { return metric_fn_; }
  bool has_explicit_metrics() const noexcept { return explicit_metrics_; }

  /// Vertex coordinates of element e, unwrapped across periodic seams so that
  /// they are relative to the first vertex.
  std::vector<Point> local_vertices(Index e) const {
    auto s = simplex(e);
    std::vector<Point> x;
    x.reserve(s.size());
    for (Index v : s) x.push_back(vertex(v));
    for (std::size_t j = 1; j < x.size(); ++j) {
      for (int a = 0; a < dim_; ++a) {
        double period = periods_[static_cast<std::size_t>(a)];
        if (period > 0.0) {
          double delta = x[j](a) - x[0](a);
          x[j](a) = x[0](a) + delta - period * std::round(delta / period);
        }
      }
    }
    return x;
  }

  Point barycenter(Index e) const {
    auto x = local_vertices(e);
    Point c = Point::Zero(dim_);
    for (const auto& p : x) c += p;
    return c / static_cast<double>(x.size());
  }

  /// Diagonal of the chart bounding box.
  double diameter() const {
    if (vertices_.empty()) return 0.0;
    Point lo = vertices_.front(), hi = vertices_.front();
    for (const auto& v : vertices_) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return (hi - lo).norm();
  }

  /// Description that rebuilds this mesh (explicit metrics included).
  MeshDescription description() const {
    MeshDescription d;
    d.dim = dim_;
    d.vertices = vertices_;
    d.simplices.reserve(geometry_.size());
    for (Index e = 0; e < num_elements(); ++e) {
      auto s = simplex(e);
      d.simplices.emplace_back(s.begin(), s.end());
    }
    d.metrics = metrics_;
    d.metric_fn = metric_fn_;
    d.periods = periods_;
    d.boundary_nodes = boundary_;
    d.truncation_nodes = truncation_;
    d.node_labels = node_labels_;
    d.element_labels = element_labels_;
    return d;
  }

 private:
  friend MeshManifold build_mesh(MeshDescription desc);

  int dim_ = 2;
  std::vector<Point> vertices_;
  std::vector<Index> simplices_;
  std::vector<Metric> metrics_;
  std::vector<ElementGeometry> geometry_;
  MetricFunction metric_fn_;
  bool explicit_metrics_ = false;
  std::vector<double> periods_;
  NodeSet boundary_;
  NodeSet truncation_;
  NodeMask boundary_mask_;
  NodeMask truncation_mask_;
  std::map<std::string, NodeSet> node_labels_;
  std::map<std::string, std::vector<Index>> element_labels_;
  std::vector<Index> vertex_elem_offsets_;
  std::vector<Index> vertex_elems_;
};

namespace detail {

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline void check_spd(const Metric& g, Index e) {
  const double scale = std::max(g.cwiseAbs().maxCoeff(), 1e-300);
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw MeshError("metric of element " + std::to_string(e) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Metric> eig(g, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0))
    throw MeshError("metric of element " + std::to_string(e) + " is not positive definite");
}

inline ElementGeometry element_geometry(const std::vector<Point>& x, const Metric& g, Index e) {
  const int d = static_cast<int>(x.size()) - 1;
  Metric edges(d, d);
  double longest = 0.0;
  for (int j = 0; j < d; ++j) {
    edges.col(j) = x[static_cast<std::size_t>(j + 1)] - x[0];
    longest = std::max(longest, edges.col(j).norm());
  }
  const double det = edges.determinant();
  ElementGeometry geo;
  geo.chart_volume = std::abs(det) / factorial(d);
  if (!(geo.chart_volume > 1e-14 * std::pow(longest, d)))
    throw MeshError("element " + std::to_string(e) + " is degenerate");
  Metric inv_edges = edges.inverse();
  geo.grad.resize(d, d + 1);
  geo.grad.col(0).setZero();
  for (int j = 0; j < d; ++j) {
    geo.grad.col(j + 1) = inv_edges.row(j).transpose();
    geo.grad.col(0) -= geo.grad.col(j + 1);
  }
  geo.inverse_metric = g.inverse();
  geo.stiffness = geo.grad.transpose() * geo.inverse_metric * geo.grad;
  geo.volume = geo.chart_volume * std::sqrt(g.determinant());
  return geo;
}

}  // namespace detail

/// Validates a description and builds the immutable mesh.
inline MeshManifold build_mesh(MeshDescription desc) {
  const int d = desc.dim;
  if (d < 1 || d > kMaxDim) throw MeshError("dimension must be 1, 2 or 3");
  const auto nv = static_cast<Index>(desc.vertices.size());
  const auto ne = static_cast<Index>(desc.simplices.size());
  for (const auto& v : desc.vertices)
    if (v.size() != d) throw MeshError("vertex coordinate count does not match dimension");
  if (!desc.metrics.empty() && static_cast<Index>(desc.metrics.size()) != ne)
    throw MeshError("metric count does not match element count");
  if (desc.periods.empty()) desc.periods.assign(static_cast<std::size_t>(d), 0.0);
  if (static_cast<int>(desc.periods.size()) != d)
    throw MeshError("period count does not match dimension");

  MeshManifold m;
  m.dim_ = d;
  m.vertices_ = std::move(desc.vertices);
  m.periods_ = std::move(desc.periods);
  m.metric_fn_ = std::move(desc.metric_fn);
  m.explicit_metrics_ = !desc.metrics.empty();
  m.simplices_.reserve(static_cast<std::size_t>(ne) * (d + 1));
  for (Index e = 0; e < ne; ++e) {
    const auto& s = desc.simplices[static_cast<std::size_t>(e)];
    if (static_cast<int>(s.size()) != d + 1)
      throw MeshError("element " + std::to_string(e) + " has wrong vertex count");
    for (Index v : s) {
      if (v < 0 || v >= nv)
        throw MeshError("element " + std::to_string(e) + " references vertex " +
                        std::to_string(v) + " out of range");
    }
    m.simplices_.insert(m.simplices_.end(), s.begin(), s.end());
  }

  m.metrics_.reserve(static_cast<std::size_t>(ne));
  m.geometry_.reserve(static_cast<std::size_t>(ne));
  for (Index e = 0; e < ne; ++e) {
    auto x = m.local_vertices(e);
    Metric g;
    if (m.explicit_metrics_) {
      g = desc.metrics[static_cast<std::size_t>(e)];
    } else if (m.metric_fn_) {
      Point c = Point::Zero(d);
      for (const auto& p : x) c += p;
      g = m.metric_fn_(c / static_cast<double>(d + 1));
    } else {
      g = Metric::Identity(d, d);
    }
    if (g.rows() != d || g.cols() != d)
      throw MeshError("metric of element " + std::to_string(e) + " has wrong size");
    detail::check_spd(g, e);
    m.geometry_.push_back(detail::element_geometry(x, g, e));
    m.metrics_.push_back(std::move(g));
  }

  auto check_nodes = [nv](const NodeSet& s, const std::string& what) {
    for (Index v : s)
      if (v < 0 || v >= nv) throw MeshError(what + " references vertex out of range");
  };
  m.boundary_ = normalized(std::move(desc.boundary_nodes));
  m.truncation_ = normalized(std::move(desc.truncation_nodes));
  check_nodes(m.boundary_, "boundary label");
  check_nodes(m.truncation_, "truncation label");
  m.boundary_mask_ = mask_of(m.boundary_, nv);
  m.truncation_mask_ = mask_of(m.truncation_, nv);
  for (Index v : m.truncation_)
    if (m.boundary_mask_[static_cast<std::size_t>(v)])
      throw MeshError("vertex " + std::to_string(v) + " is both boundary and truncation");
  for (auto& [name, set] : desc.node_labels) {
    set = normalized(std::move(set));
    check_nodes(set, "label '" + name + "'");
  }
  m.node_labels_ = std::move(desc.node_labels);
  for (auto& [name, set] : desc.element_labels) {
    set = normalized(std::move(set));
    for (Index e : set)
      if (e < 0 || e >= ne)
        throw MeshError("label '" + name + "' references element out of range");
  }
  m.element_labels_ = std::move(desc.element_labels);

  m.vertex_elem_offsets_.assign(static_cast<std::size_t>(nv) + 1, 0);
  for (Index v : m.simplices_) ++m.vertex_elem_offsets_[static_cast<std::size_t>(v) + 1];
  std::partial_sum(m.vertex_elem_offsets_.begin(), m.vertex_elem_offsets_.end(),
                   m.vertex_elem_offsets_.begin());
  m.vertex_elems_.resize(m.simplices_.size());
  std::vector<Index> fill(m.vertex_elem_offsets_.begin(), m.vertex_elem_offsets_.end() - 1);
  for (Index e = 0; e < ne; ++e)
    for (Index v : m.simplex(e))
      m.vertex_elems_[static_cast<std::size_t>(fill[static_cast<std::size_t>(v)]++)] = e;
  return m;
}

// ---------------------------------------------------------------------------
// Regions and exhaustions

/// A set of elements together with the vertices they touch.
struct Region {
  std::string name;
  std::vector<Index> elements;  // sorted
  NodeSet nodes;                // union of element vertices
  bool is_precompact = true;

  bool empty() const noexcept { return elements.empty(); }
};

inline Region make_region(const MeshManifold& mesh, std::string name,
                          std::vector<Index> elements, bool precompact = true) {
  Region r;
  r.name = std::move(name);
  r.elements = normalized(std::move(elements));
  for (Index e : r.elements) {
    if (e < 0 || e >= mesh.num_elements())
      throw MeshError("region '" + r.name + "' references element out of range");
    for (Index v : mesh.simplex(e)) r.nodes.push_back(v);
  }
  r.nodes = normalized(std::move(r.nodes));
  r.is_precompact = precompact;
  return r;
}

inline Region full_region(const MeshManifold& mesh, std::string name = "full") {
  std::vector<Index> all(static_cast<std::size_t>(mesh.num_elements()));
  std::iota(all.begin(), all.end(), 0);
  return make_region(mesh, std::move(name), std::move(all));
}

inline Region labeled_region(const MeshManifold& mesh, const std::string& label) {
  return make_region(mesh, label, mesh.element_label(label));
}

/// Per-element membership flags of a region.
inline std::vector<char> element_mask(const MeshManifold& mesh, const Region& region) {
  std::vector<char> in(static_cast<std::size_t>(mesh.num_elements()), 0);
  for (Index e : region.elements) in[static_cast<std::size_t>(e)] = 1;
  return in;
}

/// Region vertices all of whose incident elements lie in the region. The
/// remaining region vertices form its relative boundary in the mesh.
inline NodeSet interior_nodes(const MeshManifold& mesh, const Region& region) {
  auto in = element_mask(mesh, region);
  NodeSet out;
  for (Index v : region.nodes) {
    bool inside = true;
    for (Index e : mesh.elements_of(v)) inside = inside && in[static_cast<std::size_t>(e)];
    if (inside) out.push_back(v);
  }
  return out;
}

/// Metric volume of a region; `empty` flags an empty region.
struct VolumeReport {
  double value = 0.0;
  bool empty = false;
};

inline VolumeReport volume(const MeshManifold& mesh, const Region& region) {
  VolumeReport r;
  r.empty = region.empty();
  for (Index e : region.elements) r.value += mesh.geometry(e).volume;
  return r;
}

inline double total_volume(const MeshManifold& mesh) {
  double v = 0.0;
  for (Index e = 0; e < mesh.num_elements(); ++e) v += mesh.geometry(e).volume;
  return v;
}

/// Piecewise-constant gradient of a nodal field.
struct GradientField {
  std::vector<Point> chart_gradient;  // covariant components (d_j u)
  std::vector<double> norm;           // (g^{ij} d_i u d_j u)^{1/2}
};

inline GradientField element_gradient(const MeshManifold& mesh, std::span<const double> values) {
  if (static_cast<Index>(values.size()) != mesh.num_vertices())
    throw ParameterError("field size does not match vertex count");
  GradientField out;
  out.chart_gradient.reserve(static_cast<std::size_t>(mesh.num_elements()));
  out.norm.reserve(static_cast<std::size_t>(mesh.num_elements()));
  LocalVector ue(mesh.nodes_per_element());
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    const auto& geo = mesh.geometry(e);
    auto s = mesh.simplex(e);
    for (std::size_t i = 0; i < s.size(); ++i)
      ue(static_cast<Index>(i)) = values[static_cast<std::size_t>(s[i])];
    Point g = geo.grad * ue;
    const double sq = g.dot(geo.inverse_metric * g);
    out.norm.push_back(std::sqrt(std::max(sq, 0.0)));
    out.chart_gradient.push_back(std::move(g));
  }
  return out;
}

/// True when every triangle angle, measured in the element metric, is at
/// most a right angle. Only meaningful for 2-D meshes.
inline bool is_non_obtuse(const MeshManifold& mesh, double slack = 1e-12) {
  if (mesh.dim() != 2) return false;
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    auto x = mesh.local_vertices(e);
    const Metric& g = mesh.metric(e);
    for (int k = 0; k < 3; ++k) {
      Point a = x[static_cast<std::size_t>((k + 1) % 3)] - x[static_cast<std::size_t>(k)];
      Point b = x[static_cast<std::size_t>((k + 2) % 3)] - x[static_cast<std::size_t>(k)];
      const double ab = a.dot(g * b);
      if (ab < -slack * std::sqrt(a.dot(g * a) * b.dot(g * b))) return false;
    }
  }
  return true;
}

/// Growth rule for an exhaustion: elements are ordered by the largest marker
/// over their vertices and thresholds grow geometrically from `start`.
struct ExhaustionRule {
  std::string name = "radius";
  std::function<double(const Point&)> marker;
  double start = 1.0;
  double factor = 2.0;
};

inline ExhaustionRule radius_rule(double start, double factor = 2.0) {
  return {"radius", [](const Point& x) { return x.norm(); }, start, factor};
}

inline ExhaustionRule abs_coordinate_rule(int axis, double start, double factor = 2.0) {
  return {"abs_x" + std::to_string(axis),
          [axis](const Point& x) { return std::abs(x(axis)); }, start, factor};
}

inline ExhaustionRule coordinate_rule(int axis, double start, double factor = 2.0) {
  return {"x" + std::to_string(axis), [axis](const Point& x) { return x(axis); }, start,
          factor};
}

/// Strictly nested regions; the last one is the whole (truncated) mesh.
struct ExhaustionSequence {
  std::vector<Region> levels;
  std::vector<double> thresholds;

  std::size_t size() const noexcept { return levels.size(); }
  const Region& last() const { return levels.back(); }
};

inline ExhaustionSequence exhaustion(const MeshManifold& mesh, const ExhaustionRule& rule) {
  if (!rule.marker) throw ParameterError("exhaustion rule has no marker");
  if (!(rule.factor > 1.0) || !(rule.start > 0.0))
    throw ParameterError("exhaustion rule needs start > 0 and factor > 1");
  std::vector<double> marker(static_cast<std::size_t>(mesh.num_elements()));
  double top = -std::numeric_limits<double>::infinity();
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index v : mesh.simplex(e)) m = std::max(m, rule.marker(mesh.vertex(v)));
    marker[static_cast<std::size_t>(e)] = m;
    top = std::max(top, m);
  }
  std::vector<double> thresholds;
  const double tol = 1e-9 * std::max(1.0, std::abs(top));
  for (double t = rule.start; t < top - tol; t *= rule.factor) thresholds.push_back(t);
  thresholds.push_back(top);

  ExhaustionSequence seq;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const double t = thresholds[i];
    std::vector<Index> elems;
    for (Index e = 0; e < mesh.num_elements(); ++e)
      if (marker[static_cast<std::size_t>(e)] <= t + 1e-9 * std::max(1.0, std::abs(t)))
        elems.push_back(e);
    if (elems.empty()) continue;
    if (!seq.levels.empty() && seq.levels.back().elements.size() == elems.size()) {
      seq.thresholds.back() = t;
      seq.levels.back() = make_region(mesh, "level" + std::to_string(seq.levels.size() - 1),
                                      std::move(elems));
      continue;
    }
    seq.levels.push_back(
        make_region(mesh, "level" + std::to_string(seq.levels.size()), std::move(elems)));
    seq.thresholds.push_back(t);
  }
  if (seq.levels.size() < 2) throw ParameterError("exhaustion rule produces fewer than 2 levels");
  return seq;
}

/// Validates a caller-built sequence of regions.
inline ExhaustionSequence exhaustion_from_regions(const MeshManifold& mesh,
                                                  std::vector<Region> levels,
                                                  std::vector<double> sizes) {
  if (levels.size() < 2) throw ParameterError("exhaustion needs at least 2 levels");
  if (sizes.size() != levels.size()) throw ParameterError("one size per level required");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const auto& a = levels[i - 1].elements;
    const auto& b = levels[i].elements;
    if (a.size() >= b.size() || !std::includes(b.begin(), b.end(), a.begin(), a.end()))
      throw ParameterError("exhaustion levels are not strictly nested");
  }
  if (static_cast<Index>(levels.back().elements.size()) != mesh.num_elements())
    throw ParameterError("last exhaustion level must be the whole mesh");
  return {std::move(levels), std::move(sizes)};
}

// ---------------------------------------------------------------------------
// Uniform refinement

namespace detail {

inline std::uint64_t edge_key(Index a, Index b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

// Children of a simplex given its corners c[] and a midpoint lookup.
template <typename Mid>
std::vector<std::vector<Index>> split_simplex(std::span<const Index> c, Mid&& mid) {
  std::vector<std::vector<Index>> out;
  if (c.size() == 2) {
    Index m = mid(c[0], c[1]);
    out = {{c[0], m}, {m, c[1]}};
  } else if (c.size() == 3) {
    Index m01 = mid(c[0], c[1]), m12 = mid(c[1], c[2]), m02 = mid(c[0], c[2]);
    out = {{c[0], m01, m02}, {m01, c[1], m12}, {m02, m12, c[2]}, {m01, m12, m02}};
  } else {
    Index x0 = c[0], x1 = c[1], x2 = c[2], x3 = c[3];
    Index x01 = mid(x0, x1), x02 = mid(x0, x2), x03 = mid(x0, x3);
    Index x12 = mid(x1, x2), x13 = mid(x1, x3), x23 = mid(x2, x3);
    out = {{x0, x01, x02, x03},   {x01, x1, x12, x13},  {x02, x12, x2, x23},
           {x03, x13, x23, x3},   {x01, x02, x03, x13}, {x01, x02, x12, x13},
           {x02, x03, x13, x23},  {x02, x12, x13, x23}};
  }
  return out;
}

}  // namespace detail

/// Uniform subdivision: segments into 2, triangles into 4, tetrahedra into 8.
/// Old vertices keep their indices; midpoints are appended. Edge midpoints on
/// boundary facets inherit the boundary/truncation label, midpoints of edges
/// whose endpoints share a node label inherit it, children inherit element
/// labels. Metrics are re-sampled from the generator when one is attached.
inline MeshManifold refine(const MeshManifold& mesh) {
  const int d = mesh.dim();
  MeshDescription out;
  out.dim = d;
  out.vertices = mesh.vertices();
  out.periods = mesh.periods();
  out.metric_fn = mesh.metric_function();

  std::unordered_map<std::uint64_t, Index> midpoint;
  std::vector<std::pair<Index, Index>> parents;
  auto mid = [&](Index a, Index b) {
    auto key = detail::edge_key(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    Point pa = mesh.vertex(a), pb = mesh.vertex(b);
    for (int ax = 0; ax < d; ++ax) {
      double period = mesh.periods()[static_cast<std::size_t>(ax)];
      if (period > 0.0) {
        double delta = pb(ax) - pa(ax);
        pb(ax) = pa(ax) + delta - period * std::round(delta / period);
      }
    }
    Point m = 0.5 * (pa + pb);
    for (int ax = 0; ax < d; ++ax) {
      double period = mesh.periods()[static_cast<std::size_t>(ax)];
      if (period > 0.0) m(ax) -= period * std::floor(m(ax) / period);
    }
    auto idx = static_cast<Index>(out.vertices.size());
    out.vertices.push_back(m);
    parents.emplace_back(a, b);
    midpoint.emplace(key, idx);
    return idx;
  };

  std::vector<Index> parent_of;
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    for (auto& child : detail::split_simplex(mesh.simplex(e), mid)) {
      out.simplices.push_back(std::move(child));
      parent_of.push_back(e);
    }
  }
  if (mesh.has_explicit_metrics() && !mesh.metric_function()) {
    out.metrics.reserve(parent_of.size());
    for (Index p : parent_of) out.metrics.push_back(mesh.metric(p));
  }

  // Boundary facets (shared by exactly one element) and the edges they carry.
  std::map<std::vector<Index>, int> facet_count;
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    auto s = mesh.simplex(e);
    for (std::size_t skip = 0; skip < s.size(); ++skip) {
      std::vector<Index> f;
      for (std::size_t i = 0; i < s.size(); ++i)
        if (i != skip) f.push_back(s[i]);
      std::sort(f.begin(), f.end());
      ++facet_count[f];
    }
  }
  const auto& bmask = mesh.boundary_mask();
  const auto& tmask = mesh.truncation_mask();
  std::unordered_map<std::uint64_t, char> edge_label;  // 1 boundary, 2 truncation
  for (const auto& [f, count] : facet_count) {
    if (count != 1 || f.size() < 2) continue;
    bool all_marked = true, all_trunc = true;
    for (Index v : f) {
      all_marked = all_marked && (bmask[static_cast<std::size_t>(v)] ||
                                  tmask[static_cast<std::size_t>(v)]);
      all_trunc = all_trunc && tmask[static_cast<std::size_t>(v)];
    }
    if (!all_marked) continue;
    for (std::size_t i = 0; i < f.size(); ++i)
      for (std::size_t j = i + 1; j < f.size(); ++j) {
        const Index a = f[i], b = f[j];
        const bool both_trunc = tmask[static_cast<std::size_t>(a)] && tmask[static_cast<std::size_t>(b)];
        char label = (all_trunc || both_trunc) ? 2 : 1;
        auto& slot = edge_label[detail::edge_key(a, b)];
        if (slot == 0 || label == 1) slot = label;
      }
  }

  out.boundary_nodes = mesh.boundary_nodes();
  out.truncation_nodes = mesh.truncation_nodes();
  out.node_labels = mesh.node_labels();
  for (const auto& [key, idx] : midpoint) {
    auto it = edge_label.find(key);
    if (it == edge_label.end()) continue;
    (it->second == 1 ? out.boundary_nodes : out.truncation_nodes).push_back(idx);
  }
  for (auto& [name, set] : out.node_labels) {
    const NodeSet& old = mesh.node_label(name);
    for (std::size_t k = 0; k < parents.size(); ++k)
      if (contains(old, parents[k].first) && contains(old, parents[k].second))
        set.push_back(mesh.num_vertices() + static_cast<Index>(k));
  }
  const Index children = d == 1 ? 2 : (d == 2 ? 4 : 8);
  for (const auto& [name, elems] : mesh.element_labels()) {
    auto& dst = out.element_labels[name];
    for (Index e : elems)
      for (Index c = 0; c < children; ++c) dst.push_back(e * children + c);
  }
  return build_mesh(std::move(out));
}

}  // namespace pcap
