#pragma once

// Line-oriented mesh text format:
//
//   DIM d NV nv NE ne
//   PERIOD p_1 ... p_d                 (optional, periodic charts)
//   nv lines of d coordinates
//   ne lines of d+1 vertex indices [+ d(d+1)/2 upper-triangle metric entries]
//   LABEL <name> NODES|ELEMENTS <count> followed by <count> indices
//   FIELD <name> <nv> followed by nv values
//
// Indices are 0-based. The node labels "boundary" and "truncation" mark the
// manifold boundary and the artificial outer boundary. Metric entries are
// either present on every element line or on none.

#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pcap/mesh.hpp"

namespace pcap {

struct MeshFile {
  MeshManifold mesh;
  std::map<std::string, std::vector<double>> fields;
};

namespace detail {

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Splits the input into non-empty lines of tokens ('#' starts a comment).
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool line(std::vector<std::string>& toks) {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++lineno_;
      if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
      std::istringstream ss(raw);
      toks.clear();
      for (std::string t; ss >> t;) toks.push_back(t);
      if (!toks.empty()) return true;
    }
    return false;
  }

  std::vector<std::string> expect_line(const std::string& what) {
    std::vector<std::string> t;
    if (!line(t)) fail("unexpected end of file, expected " + what);
    return t;
  }

  double number(const std::string& tok, const std::string& what) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(tok, &pos);
      if (pos == tok.size()) return v;
    } catch (const std::exception&) {
    }
    fail("expected " + what + ", got '" + tok + "'");
  }

  long long integer(const std::string& tok, const std::string& what) const {
    try {
      std::size_t pos = 0;
      long long v = std::stoll(tok, &pos);
      if (pos == tok.size()) return v;
    } catch (const std::exception&) {
    }
    fail("expected " + what + ", got '" + tok + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw MeshError("mesh file line " + std::to_string(lineno_) + ": " + msg);
  }

 private:
  std::istream& in_;
  int lineno_ = 0;
};

}  // namespace detail

inline MeshFile read_mesh(std::istream& in) {
  detail::LineReader r(in);
  auto head = r.expect_line("header");
  if (head.size() != 6 || head[0] != "DIM" || head[2] != "NV" || head[4] != "NE")
    r.fail("header must be 'DIM d NV nv NE ne'");
  MeshDescription d;
  d.dim = static_cast<int>(r.integer(head[1], "dimension"));
  if (d.dim < 1 || d.dim > kMaxDim) r.fail("dimension must be 1, 2 or 3");
  const long long nv = r.integer(head[3], "vertex count");
  const long long ne = r.integer(head[5], "element count");
  if (nv < 0 || ne < 0) r.fail("negative counts");

  std::vector<std::string> t;
  bool pending = false;
  if (nv > 0 || ne > 0) {
    t = r.expect_line("vertex");
    pending = true;
    if (t[0] == "PERIOD") {
      if (static_cast<int>(t.size()) != d.dim + 1) r.fail("PERIOD needs one value per axis");
      for (int a = 0; a < d.dim; ++a) d.periods.push_back(r.number(t[static_cast<std::size_t>(a) + 1], "period"));
      pending = false;
    }
  }
  for (long long i = 0; i < nv; ++i) {
    if (!pending) t = r.expect_line("vertex");
    pending = false;
    if (static_cast<int>(t.size()) != d.dim) r.fail("vertex line needs " + std::to_string(d.dim) + " coordinates");
    Point x(d.dim);
    for (int a = 0; a < d.dim; ++a) x(a) = r.number(t[static_cast<std::size_t>(a)], "coordinate");
    d.vertices.push_back(std::move(x));
  }

  const std::size_t plain = static_cast<std::size_t>(d.dim) + 1;
  const std::size_t full = plain + static_cast<std::size_t>(d.dim * (d.dim + 1) / 2);
  std::size_t width = 0;
  for (long long e = 0; e < ne; ++e) {
    if (!pending) t = r.expect_line("element");
    pending = false;
    if (width == 0) width = t.size();
    if (t.size() != width || (width != plain && width != full))
      r.fail("element line needs " + std::to_string(plain) + " indices, optionally followed by " +
             std::to_string(full - plain) + " metric entries, on every line");
    std::vector<Index> s;
    for (std::size_t k = 0; k < plain; ++k) {
      const long long v = r.integer(t[k], "vertex index");
      if (v < 0 || v >= nv) r.fail("element references vertex " + t[k] + " out of range");
      s.push_back(static_cast<Index>(v));
    }
    d.simplices.push_back(std::move(s));
    if (width == full) {
      Metric g(d.dim, d.dim);
      std::size_t k = plain;
      for (int a = 0; a < d.dim; ++a)
        for (int b = a; b < d.dim; ++b, ++k) {
          g(a, b) = r.number(t[k], "metric entry");
          g(b, a) = g(a, b);
        }
      d.metrics.push_back(std::move(g));
    }
  }

  // Label and field blocks: a header line followed by values that may span
  // several lines.
  MeshFile out;
  std::vector<std::string> body;
  auto take = [&](long long count, const std::string& what) {
    std::vector<std::string> vals;
    while (static_cast<long long>(vals.size()) < count) {
      if (!r.line(body)) r.fail("unexpected end of file in " + what);
      vals.insert(vals.end(), body.begin(), body.end());
    }
    if (static_cast<long long>(vals.size()) != count) r.fail("too many values in " + what);
    return vals;
  };
  while (r.line(t)) {
    if (t[0] == "LABEL") {
      if (t.size() != 4) r.fail("label header must be 'LABEL <name> NODES|ELEMENTS <count>'");
      const std::string& name = t[1];
      const std::string kind = t[2];
      const long long count = r.integer(t[3], "label size");
      if (count < 0) r.fail("negative label size");
      std::vector<Index> ids;
      for (const auto& v : take(count, "label '" + name + "'")) {
        const long long id = r.integer(v, "index");
        if (id < 0 || id > std::numeric_limits<Index>::max()) r.fail("index out of range in label '" + name + "'");
        ids.push_back(static_cast<Index>(id));
      }
      if (kind == "NODES") {
        if (name == "boundary")
          d.boundary_nodes = std::move(ids);
        else if (name == "truncation")
          d.truncation_nodes = std::move(ids);
        else
          d.node_labels[name] = std::move(ids);
      } else if (kind == "ELEMENTS") {
        d.element_labels[name] = std::move(ids);
      } else {
        r.fail("label kind must be NODES or ELEMENTS");
      }
    } else if (t[0] == "FIELD") {
      if (t.size() != 3) r.fail("field header must be 'FIELD <name> <count>'");
      const std::string name = t[1];
      const long long count = r.integer(t[2], "field size");
      if (count != nv) r.fail("field '" + name + "' must have one value per vertex");
      std::vector<double> vals;
      for (const auto& v : take(count, "field '" + name + "'")) vals.push_back(r.number(v, "field value"));
      out.fields[name] = std::move(vals);
    } else {
      r.fail("unexpected '" + t[0] + "'");
    }
  }
  out.mesh = build_mesh(std::move(d));
  return out;
}

inline MeshFile read_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file '" + path + "'");
  return read_mesh(in);
}

inline void write_mesh(std::ostream& out, const MeshManifold& mesh,
                       const std::map<std::string, std::vector<double>>& fields = {}) {
  const int d = mesh.dim();
  out << "DIM " << d << " NV " << mesh.num_vertices() << " NE " << mesh.num_elements() << "\n";
  bool periodic = false;
  for (double p : mesh.periods()) periodic = periodic || p != 0.0;
  if (periodic) {
    out << "PERIOD";
    for (double p : mesh.periods()) out << ' ' << detail::fmt_double(p);
    out << "\n";
  }
  for (Index v = 0; v < mesh.num_vertices(); ++v) {
    const Point& x = mesh.vertex(v);
    for (int a = 0; a < d; ++a) out << (a ? " " : "") << detail::fmt_double(x(a));
    out << "\n";
  }
  bool identity = true;
  for (Index e = 0; e < mesh.num_elements() && identity; ++e)
    identity = mesh.metric(e).isIdentity(0.0);
  for (Index e = 0; e < mesh.num_elements(); ++e) {
    auto s = mesh.simplex(e);
    for (std::size_t k = 0; k < s.size(); ++k) out << (k ? " " : "") << s[k];
    if (!identity) {
      const Metric& g = mesh.metric(e);
      for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) out << ' ' << detail::fmt_double(g(a, b));
    }
    out << "\n";
  }
  auto write_set = [&](const std::string& name, const char* kind, const std::vector<Index>& ids) {
    out << "LABEL " << name << ' ' << kind << ' ' << ids.size() << "\n";
    for (std::size_t i = 0; i < ids.size(); ++i) out << (i % 16 ? " " : "") << ids[i] << ((i % 16 == 15 || i + 1 == ids.size()) ? "\n" : "");
  };
  write_set("boundary", "NODES", mesh.boundary_nodes());
  write_set("truncation", "NODES", mesh.truncation_nodes());
  for (const auto& [name, set] : mesh.node_labels()) write_set(name, "NODES", set);
  for (const auto& [name, set] : mesh.element_labels()) write_set(name, "ELEMENTS", set);
  for (const auto& [name, vals] : fields) {
    if (static_cast<Index>(vals.size()) != mesh.num_vertices())
      throw ParameterError("field '" + name + "' does not match the mesh");
    out << "FIELD " << name << ' ' << vals.size() << "\n";
    for (double x : vals) out << detail::fmt_double(x) << "\n";
  }
}

inline std::string mesh_to_string(const MeshManifold& mesh,
                                  const std::map<std::string, std::vector<double>>& fields = {}) {
  std::ostringstream s;
  write_mesh(s, mesh, fields);
  return s.str();
}

}  // namespace pcap
