#pragma once

// Command-line front end: a JSON run configuration, model construction,
// dispatch to the solve / capacity / criterion / poincare / study pipelines,
// and report writing.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcap/capacity.hpp"
#include "pcap/criterion.hpp"
#include "pcap/energy.hpp"
#include "pcap/mesh.hpp"
#include "pcap/mesh_io.hpp"
#include "pcap/models.hpp"
#include "pcap/poincare.hpp"
#include "pcap/radial_oracle.hpp"
#include "pcap/solver.hpp"

namespace pcap::cli {

using json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitUnexpected = 1,
  kExitValidation = 2,
  kExitNotConverged = 3,
  kExitInconclusive = 4,
  kExitSeedCheck = 5,
};

/// Configuration problems: unknown keys, wrong types, missing files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline json default_config() {
  return json::parse(R"({
    "command": "solve",
    "model": {"kind": "annulus", "r": 0.5, "R": 1.0, "refinement": 2, "grading": "uniform",
              "n_theta": 0, "n_r": 0, "outer": "truncation"},
    "refine": 0,
    "solver": {"p": 2.0, "epsilon": 1e-8, "tol_residual": null, "tol_energy": 1e-16,
               "max_iter": 200, "damping": 1.0, "method": "irls"},
    "problem": "dirichlet",
    "data": {"kind": "labels", "values": {"inner": 1.0}, "default": 0.0},
    "capacity": {"K": "boundary", "omega": "full", "psi": {"kind": "constant", "value": 1.0},
                 "sequence": "none"},
    "exhaustion": {"marker": "radius", "start": 1.0, "factor": 2.0},
    "witness": {"constants": true, "neumann": false, "zero": false, "files": []},
    "decision_rule": {"bounded_relative_change": 0.01, "diverging_growth": 0.10,
                      "diverging_slope": 0.5, "window": 3, "monotone_slack": 1e-8},
    "poincare": {"G": "full", "omega": "full", "form": "mean"},
    "study": {"levels": 4},
    "output": {"dir": "", "formats": ["json"], "fields": false},
    "seed": 20240601
  })");
}

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
T get(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + " needs '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  return get<T>(obj, key, where);
}

// Objects merge key by key; everything else is replaced. Unknown top-level
// sections are rejected.
inline void merge(json& base, const json& patch, const std::string& where, bool strict) {
  for (const auto& [k, v] : patch.items()) {
    if (strict && !base.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    // Model, field specs and witness files vary in shape: replace wholesale.
    const bool replace = k == "model" || k == "data" || k == "psi" || k == "files" ||
                         k == "values" || !v.is_object() || !base.contains(k) ||
                         !base[k].is_object();
    if (replace)
      base[k] = v;
    else
      merge(base[k], v, where + "." + k, strict && k != "decision_rule");
  }
}

}  // namespace detail

/// Effective configuration: defaults, then a config document, then flags.
struct RunConfig {
  json doc = default_config();

  const json& operator[](const char* k) const { return doc.at(k); }
  std::string command() const { return doc.at("command").get<std::string>(); }
};

inline RunConfig load_config(const json& patch) {
  RunConfig c;
  if (!patch.is_object()) throw ConfigError("configuration must be a JSON object");
  detail::merge(c.doc, patch, "config", true);
  return c;
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json patch;
  try {
    patch = json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config '" + path + "': " + e.what());
  }
  return load_config(patch);
}

// ---------------------------------------------------------------------------
// Models, fields and regions

inline MeshManifold build_model(const json& m, int extra_refine = 0) {
  const std::string where = "model";
  const auto kind = detail::get<std::string>(m, "kind", where);
  MeshManifold mesh;
  if (kind == "annulus") {
    detail::check_keys(m, {"kind", "r", "R", "refinement", "grading", "n_theta", "n_r", "outer"}, where);
    models::AnnulusOptions opt;
    const auto grading = detail::get_or<std::string>(m, "grading", "uniform", where);
    if (grading == "log")
      opt.grading = models::RadialGrading::kLogarithmic;
    else if (grading != "uniform")
      throw ConfigError("model.grading must be 'uniform' or 'log'");
    opt.n_theta = detail::get_or<int>(m, "n_theta", 0, where);
    opt.n_r = detail::get_or<int>(m, "n_r", 0, where);
    const auto outer = detail::get_or<std::string>(m, "outer", "truncation", where);
    if (outer != "truncation" && outer != "boundary")
      throw ConfigError("model.outer must be 'truncation' or 'boundary'");
    opt.outer_is_boundary = outer == "boundary";
    mesh = models::annulus_mesh(detail::get<double>(m, "r", where), detail::get<double>(m, "R", where),
                                detail::get_or<int>(m, "refinement", 0, where), opt);
  } else if (kind == "disk") {
    detail::check_keys(m, {"kind", "radius", "refinement"}, where);
    mesh = models::disk_mesh(detail::get_or<double>(m, "radius", 1.0, where),
                             detail::get_or<int>(m, "refinement", 0, where));
  } else if (kind == "half_disk") {
    detail::check_keys(m, {"kind", "radius", "refinement"}, where);
    mesh = models::half_disk_mesh(detail::get_or<double>(m, "radius", 1.0, where),
                                  detail::get_or<int>(m, "refinement", 0, where));
  } else if (kind == "half_plane") {
    detail::check_keys(m, {"kind", "width", "height", "refinement"}, where);
    mesh = models::half_plane_mesh(detail::get<double>(m, "width", where),
                                   detail::get<double>(m, "height", where),
                                   detail::get_or<int>(m, "refinement", 0, where));
  } else if (kind == "square") {
    detail::check_keys(m, {"kind", "n", "size"}, where);
    mesh = models::square_mesh(detail::get_or<int>(m, "n", 8, where),
                               detail::get_or<double>(m, "size", 1.0, where));
  } else if (kind == "revolution") {
    detail::check_keys(m, {"kind", "profile", "t0", "t1", "n_t", "n_theta", "scale", "exponent", "truncation"}, where);
    const auto profile = detail::get_or<std::string>(m, "profile", "cone", where);
    const double scale = detail::get_or<double>(m, "scale", 1.0, where);
    const double a = detail::get_or<double>(m, "exponent", 1.0, where);
    std::function<double(double)> f;
    if (profile == "cylinder")
      f = [scale](double) { return scale; };
    else if (profile == "cone")
      f = [scale](double t) { return scale * t; };
    else if (profile == "power")
      f = [scale, a](double t) { return scale * std::pow(t, a); };
    else if (profile == "exp")
      f = [scale, a](double t) { return scale * std::exp(a * t); };
    else
      throw ConfigError("model.profile must be cylinder, cone, power or exp");
    auto spec = models::sampled_profile(detail::get<double>(m, "t0", where), detail::get<double>(m, "t1", where),
                                        detail::get_or<int>(m, "n_t", 32, where),
                                        detail::get_or<int>(m, "n_theta", 32, where), f);
    if (m.contains("truncation") && !m.at("truncation").is_null())
      spec.truncation = detail::get<double>(m, "truncation", where);
    mesh = models::revolution_manifold(spec);
  } else if (kind == "file") {
    detail::check_keys(m, {"kind", "path"}, where);
    mesh = read_mesh_file(detail::get<std::string>(m, "path", where)).mesh;
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }
  for (int i = 0; i < extra_refine; ++i) mesh = refine(mesh);
  return mesh;
}

inline const NodeSet& node_set(const MeshManifold& mesh, const std::string& name) {
  if (name == "boundary") return mesh.boundary_nodes();
  if (name == "truncation") return mesh.truncation_nodes();
  return mesh.node_label(name);
}

inline ScalarField build_field(const MeshManifold& mesh, const json& f, const std::string& where) {
  const auto kind = detail::get<std::string>(f, "kind", where);
  const auto nv = static_cast<std::size_t>(mesh.num_vertices());
  if (kind == "constant") {
    detail::check_keys(f, {"kind", "value"}, where);
    return constant_field(mesh, detail::get<double>(f, "value", where));
  }
  if (kind == "linear") {
    detail::check_keys(f, {"kind", "coefficients", "offset"}, where);
    const auto c = detail::get<std::vector<double>>(f, "coefficients", where);
    if (static_cast<int>(c.size()) != mesh.dim()) throw ConfigError(where + ".coefficients needs one entry per axis");
    const double off = detail::get_or<double>(f, "offset", 0.0, where);
    return sample_field(mesh, [&](const Point& x) {
      double s = off;
      for (int a = 0; a < mesh.dim(); ++a) s += c[static_cast<std::size_t>(a)] * x(a);
      return s;
    });
  }
  if (kind == "sin") {
    detail::check_keys(f, {"kind", "axis", "frequency", "amplitude", "phase"}, where);
    const int axis = detail::get_or<int>(f, "axis", 0, where);
    if (axis < 0 || axis >= mesh.dim()) throw ConfigError(where + ".axis out of range");
    const double k = detail::get_or<double>(f, "frequency", 1.0, where);
    const double amp = detail::get_or<double>(f, "amplitude", 1.0, where);
    const double ph = detail::get_or<double>(f, "phase", 0.0, where);
    return sample_field(mesh, [&](const Point& x) { return amp * std::sin(k * x(axis) + ph); });
  }
  if (kind == "labels") {
    detail::check_keys(f, {"kind", "values", "default"}, where);
    std::vector<double> v(nv, detail::get_or<double>(f, "default", 0.0, where));
    const json& vals = f.at("values");
    if (!vals.is_object()) throw ConfigError(where + ".values must be an object");
    for (const auto& [label, val] : vals.items())
      for (Index n : node_set(mesh, label)) v[static_cast<std::size_t>(n)] = val.get<double>();
    return make_field(std::move(v));
  }
  if (kind == "file") {
    detail::check_keys(f, {"kind", "path", "name"}, where);
    auto file = read_mesh_file(detail::get<std::string>(f, "path", where));
    const auto name = detail::get_or<std::string>(f, "name", "", where);
    if (file.fields.empty()) throw ConfigError(where + ": file has no FIELD block");
    auto it = name.empty() ? file.fields.begin() : file.fields.find(name);
    if (it == file.fields.end()) throw ConfigError(where + ": no field named '" + name + "'");
    if (it->second.size() != nv) throw ConfigError(where + ": field does not match the mesh");
    return make_field(it->second);
  }
  throw ConfigError("unknown field kind '" + kind + "' in " + where);
}

inline ExhaustionRule build_exhaustion_rule(const json& e) {
  detail::check_keys(e, {"marker", "start", "factor"}, "exhaustion");
  const auto marker = detail::get_or<std::string>(e, "marker", "radius", "exhaustion");
  const double start = detail::get_or<double>(e, "start", 1.0, "exhaustion");
  const double factor = detail::get_or<double>(e, "factor", 2.0, "exhaustion");
  if (marker == "radius") return radius_rule(start, factor);
  if (marker == "abs_x") return abs_coordinate_rule(0, start, factor);
  if (marker == "abs_y") return abs_coordinate_rule(1, start, factor);
  if (marker == "x") return coordinate_rule(0, start, factor);
  if (marker == "y") return coordinate_rule(1, start, factor);
  throw ConfigError("exhaustion.marker must be radius, abs_x, abs_y, x or y");
}

inline Region build_region(const MeshManifold& mesh, const std::string& name,
                           const ExhaustionSequence* exh) {
  if (name == "full") return full_region(mesh);
  if (name.rfind("level:", 0) == 0) {
    if (!exh) throw ConfigError("region '" + name + "' needs an exhaustion");
    const int i = std::stoi(name.substr(6));
    if (i < 0 || i >= static_cast<int>(exh->size())) throw ConfigError("region '" + name + "' out of range");
    return exh->levels[static_cast<std::size_t>(i)];
  }
  return labeled_region(mesh, name);
}

inline SolverParams build_solver_params(const json& s) {
  detail::check_keys(s, {"p", "epsilon", "tol_residual", "tol_energy", "max_iter", "damping", "method"}, "solver");
  SolverParams p;
  p.p = detail::get_or<double>(s, "p", 2.0, "solver");
  p.epsilon = detail::get_or<double>(s, "epsilon", 1e-8, "solver");
  if (s.contains("tol_residual") && !s.at("tol_residual").is_null())
    p.tol_residual = detail::get<double>(s, "tol_residual", "solver");
  p.tol_energy = detail::get_or<double>(s, "tol_energy", 1e-16, "solver");
  p.max_iter = detail::get_or<int>(s, "max_iter", 200, "solver");
  p.damping = detail::get_or<double>(s, "damping", 1.0, "solver");
  const auto method = detail::get_or<std::string>(s, "method", "irls", "solver");
  if (method == "irls")
    p.method = Method::kIrls;
  else if (method == "gradient_descent")
    p.method = Method::kGradientDescent;
  else
    throw ConfigError("solver.method must be 'irls' or 'gradient_descent'");
  p.validate();
  return p;
}

inline BoundednessRule build_rule(const json& r) {
  detail::check_keys(r, {"bounded_relative_change", "diverging_growth", "diverging_slope", "window", "monotone_slack"},
                     "decision_rule");
  BoundednessRule rule;
  rule.bounded_relative_change = detail::get_or<double>(r, "bounded_relative_change", rule.bounded_relative_change, "decision_rule");
  rule.diverging_growth = detail::get_or<double>(r, "diverging_growth", rule.diverging_growth, "decision_rule");
  rule.diverging_slope = detail::get_or<double>(r, "diverging_slope", rule.diverging_slope, "decision_rule");
  rule.window = detail::get_or<int>(r, "window", rule.window, "decision_rule");
  rule.monotone_slack = detail::get_or<double>(r, "monotone_slack", rule.monotone_slack, "decision_rule");
  if (rule.window < 2) throw ConfigError("decision_rule.window must be >= 2");
  return rule;
}

inline WitnessFamily build_witness_family(const MeshManifold& mesh, const json& w) {
  detail::check_keys(w, {"constants", "neumann", "zero", "files"}, "witness");
  WitnessFamily f;
  f.constants = detail::get_or<bool>(w, "constants", true, "witness");
  f.neumann = detail::get_or<bool>(w, "neumann", false, "witness");
  f.zero = detail::get_or<bool>(w, "zero", false, "witness");
  if (w.contains("files"))
    for (const auto& item : w.at("files")) {
      const std::string path = item.is_string() ? item.get<std::string>() : detail::get<std::string>(item, "path", "witness.files");
      auto file = read_mesh_file(path);
      if (file.fields.empty()) throw ConfigError("witness file '" + path + "' has no FIELD block");
      for (auto& [name, vals] : file.fields) {
        if (static_cast<Index>(vals.size()) != mesh.num_vertices())
          throw ConfigError("witness field '" + name + "' does not match the mesh");
        f.fields.emplace_back(name, make_field(vals, ScalarField::Provenance::kWitness));
      }
    }
  if (f.empty()) throw ConfigError("witness family is empty");
  return f;
}

/// Checks that do not need any computation: command, p, referenced files.
inline void validate(const RunConfig& cfg) {
  const auto& d = cfg.doc;
  const std::string cmd = cfg.command();
  static const std::set<std::string> commands = {"solve", "capacity", "criterion", "poincare", "study"};
  if (!commands.count(cmd)) throw ConfigError("unknown command '" + cmd + "'");
  build_solver_params(d.at("solver"));
  build_rule(d.at("decision_rule"));
  std::vector<std::string> files;
  auto collect = [&](const json& j) {
    if (j.is_object() && j.contains("kind") && j.at("kind") == "file" && j.contains("path")) files.push_back(j.at("path").get<std::string>());
  };
  collect(d.at("model"));
  collect(d.at("data"));
  collect(d.at("capacity").at("psi"));
  for (const auto& item : d.at("witness").value("files", json::array()))
    files.push_back(item.is_string() ? item.get<std::string>() : item.value("path", std::string()));
  for (const auto& f : files)
    if (!std::filesystem::exists(f)) throw ConfigError("referenced file '" + f + "' does not exist");
  const int refine_n = d.at("refine").get<int>();
  if (refine_n < 0) throw ConfigError("refine must be >= 0");
  if (!d.at("output").at("formats").is_array()) throw ConfigError("output.formats must be an array");
  for (const auto& f : d.at("output").at("formats")) {
    const auto s = f.get<std::string>();
    if (s != "json" && s != "csv") throw ConfigError("unknown report format '" + s + "'");
  }
  if (cmd == "study") {
    if (d.at("model").at("kind") != "annulus")
      throw ConfigError("study needs a model with an oracle reference (annulus)");
    if (d.at("study").at("levels").get<int>() < 1) throw ConfigError("study.levels must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Running

struct RunReport {
  json doc;
  std::string csv;  // empty when the command has no tabular output
  std::map<std::string, std::vector<double>> fields;
  int exit_code = kExitOk;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt(double x) { return pcap::detail::fmt_double(x); }

inline std::string sequence_csv(const CapacitySequence& s) {
  std::string out = "level,size,capacity\n";
  for (const auto& l : s.levels) out += std::to_string(l.level) + "," + fmt(l.size) + "," + fmt(l.estimate.value) + "\n";
  return out;
}

/// Capacity convergence study on the annulus against the radial oracle.
inline RunReport convergence_study(const RunConfig& cfg) {
  const json& d = cfg.doc;
  const json& m = d.at("model");
  if (m.at("kind") != "annulus") throw ConfigError("study needs a model with an oracle reference (annulus)");
  const SolverParams params = build_solver_params(d.at("solver"));
  const int L = d.at("study").at("levels").get<int>();
  const double r = m.at("r").get<double>(), R = m.at("R").get<double>();
  if (m.value("outer", std::string("truncation")) != "truncation")
    throw ConfigError("study needs the outer circle as truncation");
  const auto oracle = models::radial_oracle(2, params.p, r, R, 1.0, 0.0);

  RunReport rep;
  json rows = json::array();
  rep.csv = "level,vertices,capacity,reference,error,order,wall_time_s\n";
  double prev_err = 0.0;
  bool all_converged = true;
  for (int level = 1; level <= L; ++level) {
    const auto t0 = std::chrono::steady_clock::now();
    json mm = m;
    mm["refinement"] = level;
    MeshManifold mesh = build_model(mm);
    std::vector<double> psi(static_cast<std::size_t>(mesh.num_vertices()), 1.0);
    CapacityEstimate est = capacity_compact(mesh, mesh.node_label("inner"), full_region(mesh), psi, params);
    all_converged = all_converged && est.converged;
    const double err = std::abs(est.value - oracle.capacity) / oracle.capacity;
    json row;
    row["level"] = level;
    row["vertices"] = mesh.num_vertices();
    row["capacity"] = est.value;
    row["reference"] = oracle.capacity;
    row["error"] = err;
    std::string order = "n/a";
    if (level > 1 && err > 0.0 && prev_err > 0.0) {
      row["order"] = std::log(prev_err / err) / std::log(2.0);
      order = fmt(row["order"].get<double>());
    } else {
      row["order"] = "n/a";
    }
    row["residual"] = est.residual;
    row["tolerance"] = est.tolerance;
    row["converged"] = est.converged;
    const double wall = seconds_since(t0);
    row["wall_time_s"] = wall;
    rep.csv += std::to_string(level) + "," + std::to_string(mesh.num_vertices()) + "," + fmt(est.value) + "," +
               fmt(oracle.capacity) + "," + fmt(err) + "," + order + "," + fmt(wall) + "\n";
    rows.push_back(std::move(row));
    prev_err = err;
  }
  rep.doc["reference"] = {{"kind", "radial_oracle"}, {"n", 2}, {"p", params.p}, {"r", r}, {"R", R},
                          {"capacity", oracle.capacity}};
  rep.doc["rows"] = std::move(rows);
  rep.exit_code = all_converged ? kExitOk : kExitNotConverged;
  return rep;
}

inline RunReport run_command(const RunConfig& cfg) {
  const json& d = cfg.doc;
  const std::string cmd = cfg.command();
  if (cmd == "study") return convergence_study(cfg);

  const SolverParams params = build_solver_params(d.at("solver"));
  MeshManifold mesh = build_model(d.at("model"), d.at("refine").get<int>());
  RunReport rep;
  rep.doc["mesh"] = {{"dim", mesh.dim()},
                     {"vertices", mesh.num_vertices()},
                     {"elements", mesh.num_elements()},
                     {"boundary_nodes", mesh.boundary_nodes().size()},
                     {"truncation_nodes", mesh.truncation_nodes().size()},
                     {"volume", total_volume(mesh)}};
  const bool want_fields = d.at("output").at("fields").get<bool>();

  auto exhaustion_of = [&]() { return exhaustion(mesh, build_exhaustion_rule(d.at("exhaustion"))); };

  if (cmd == "solve") {
    const ScalarField h = build_field(mesh, d.at("data"), "data");
    const auto problem = d.at("problem").get<std::string>();
    SolveResult res;
    if (problem == "dirichlet") {
      res = solve_dirichlet(mesh, h, params);
      rep.doc["result"] = to_json(res, false);
      rep.doc["result"]["test_space"] = "interior";
    } else if (problem == "neumann") {
      NeumannSolution ns = solve_neumann_member(mesh, h, params);
      res = ns.result;
      rep.doc["result"] = to_json(res, false);
      rep.doc["result"]["test_space"] = "all_but_truncation";
      rep.doc["result"]["full_residual"] = ns.full_residual;
      if (want_fields) rep.fields["v"] = ns.v.values;
    } else {
      throw ConfigError("problem must be 'dirichlet' or 'neumann'");
    }
    if (want_fields) {
      rep.fields["h"] = h.values;
      rep.fields["u"] = res.field.values;
    }
    rep.exit_code = res.converged ? kExitOk : kExitNotConverged;
    return rep;
  }

  if (cmd == "capacity") {
    const json& c = d.at("capacity");
    detail::check_keys(c, {"K", "omega", "psi", "sequence"}, "capacity");
    const ScalarField psi = build_field(mesh, c.at("psi"), "capacity.psi");
    const auto K = c.at("K").get<std::string>();
    const auto seq_kind = c.at("sequence").get<std::string>();
    if (seq_kind == "none") {
      std::optional<ExhaustionSequence> exh;
      const auto omega_name = c.at("omega").get<std::string>();
      if (omega_name.rfind("level:", 0) == 0) exh = exhaustion_of();
      const Region omega = build_region(mesh, omega_name, exh ? &*exh : nullptr);
      NodeSet k;
      const NodeMask in = mask_of(omega.nodes, mesh.num_vertices());
      for (Index v : node_set(mesh, K))
        if (in[static_cast<std::size_t>(v)]) k.push_back(v);
      CapacityEstimate est = capacity_compact(mesh, k, omega, psi.values, params);
      rep.doc["result"] = to_json(est);
      rep.doc["result"]["p"] = params.p;
      if (want_fields) rep.fields["minimizer"] = est.minimizer.values;
      rep.exit_code = est.converged ? kExitOk : kExitNotConverged;
      return rep;
    }
    SequenceDirection dir;
    if (seq_kind == "growing-K")
      dir = SequenceDirection::kGrowingK;
    else if (seq_kind == "growing-Omega")
      dir = SequenceDirection::kGrowingOmega;
    else if (seq_kind == "diagonal")
      dir = SequenceDirection::kDiagonal;
    else
      throw ConfigError("capacity.sequence must be none, growing-K, growing-Omega or diagonal");
    const ExhaustionSequence exh = exhaustion_of();
    const ClosedSetRule rule = K == "boundary" ? boundary_rule() : label_rule(K);
    CapacitySequence seq = capacity_closed(mesh, rule, exh, psi.values, params, dir);
    rep.doc["result"] = to_json(seq);
    rep.doc["result"]["p"] = params.p;
    rep.doc["result"]["epsilon"] = params.epsilon;
    rep.csv = sequence_csv(seq);
    bool conv = true;
    for (const auto& l : seq.levels) conv = conv && l.estimate.converged;
    rep.exit_code = conv ? kExitOk : kExitNotConverged;
    return rep;
  }

  if (cmd == "criterion") {
    const ScalarField h = build_field(mesh, d.at("data"), "data");
    const ExhaustionSequence exh = exhaustion_of();
    const WitnessFamily family = build_witness_family(mesh, d.at("witness"));
    const BoundednessRule rule = build_rule(d.at("decision_rule"));
    CriterionVerdict v = criterion_check(mesh, h, exh, params, family, rule);
    rep.doc["result"] = to_json(v);
    rep.doc["result"]["p"] = params.p;
    rep.doc["result"]["epsilon"] = params.epsilon;
    rep.csv = to_csv(v);
    if (want_fields && v.solution) {
      rep.fields["u"] = v.solution->u.values;
      rep.fields["u0"] = v.solution->u0.values;
      rep.fields["u1"] = v.solution->u1.values;
      rep.fields["w"] = v.witnesses[*v.best].w.values;
    }
    bool conv = true;
    for (const auto& w : v.witnesses)
      for (const auto& l : w.sequence.levels) conv = conv && l.estimate.converged;
    if (v.solution) conv = conv && v.solution->converged;
    if (v.verdict == Verdict::kInconclusive)
      rep.exit_code = kExitInconclusive;
    else
      rep.exit_code = conv ? kExitOk : kExitNotConverged;
    return rep;
  }

  if (cmd == "poincare") {
    const json& pc = d.at("poincare");
    detail::check_keys(pc, {"G", "omega", "form"}, "poincare");
    const Region G = build_region(mesh, pc.at("G").get<std::string>(), nullptr);
    const Region omega = build_region(mesh, pc.at("omega").get<std::string>(), nullptr);
    const auto form_s = pc.at("form").get<std::string>();
    PoincareForm form;
    if (form_s == "mean")
      form = PoincareForm::kMean;
    else if (form_s == "integral")
      form = PoincareForm::kIntegral;
    else
      throw ConfigError("poincare.form must be 'mean' or 'integral'");
    PoincareEstimate est = poincare_constant(mesh, params.p, G, omega, form);
    rep.doc["result"] = to_json(est);
    if (want_fields) rep.fields["extremal"] = est.extremal;
    return rep;
  }
  throw ConfigError("unknown command '" + cmd + "'");
}

/// Writes `text` to `path` through a temporary file and a rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline json report_document(const RunConfig& cfg, const RunReport& rep, double wall) {
  json doc;
  doc["tool"] = "pcap";
  doc["version"] = kToolVersion;
  doc["command"] = cfg.command();
  doc["config"] = cfg.doc;
  doc["decision_rule"] = to_json(build_rule(cfg.doc.at("decision_rule")));
  for (const auto& [k, v] : rep.doc.items()) doc[k] = v;
  doc["exit_code"] = rep.exit_code;
  doc["wall_time_s"] = wall;
  return doc;
}

/// Validates, runs and writes outputs. Returns the process exit code.
inline int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  try {
    validate(cfg);
    rep = run_command(cfg);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const MeshError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUnexpected;
  }
  const json doc = report_document(cfg, rep, seconds_since(t0));
  const json& o = cfg.doc.at("output");
  const auto dir = o.at("dir").get<std::string>();
  std::set<std::string> formats;
  for (const auto& f : o.at("formats")) formats.insert(f.get<std::string>());
  const std::string text = doc.dump(2) + "\n";
  if (dir.empty()) {
    out << text;
  } else {
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    if (formats.count("json")) write_atomic(base / "report.json", text);
    if (formats.count("csv") && !rep.csv.empty()) write_atomic(base / "report.csv", rep.csv);
    if (!rep.fields.empty()) {
      MeshManifold mesh = build_model(cfg.doc.at("model"), cfg.doc.at("refine").get<int>());
      write_atomic(base / "fields.txt", mesh_to_string(mesh, rep.fields));
    }
    out << (base / "report.json").string() << "\n";
  }
  return rep.exit_code;
}

// ---------------------------------------------------------------------------
// Invariant suite

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline std::vector<CheckLine> seed_check(std::uint64_t seed) {
  std::vector<CheckLine> lines;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto random_values = [&](Index n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = unif(rng);
    return v;
  };
  auto add = [&](std::string name, bool pass, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", value);
    lines.push_back({std::move(name), pass, buf});
  };

  const MeshManifold sq = models::square_mesh(6);
  const MeshManifold ann = models::annulus_mesh(0.5, 1.0, 0);
  const double ps[] = {1.5, 2.0, 3.0};

  {
    double worst = 0.0;
    for (double p : ps) {
      auto u = random_values(sq.num_vertices());
      const double lam = 3.0 * unif(rng);
      auto lu = u;
      for (auto& x : lu) x *= lam;
      const double a = dirichlet_energy(sq, lu, p).value;
      const double b = std::pow(std::abs(lam), p) * dirichlet_energy(sq, u, p).value;
      worst = std::max(worst, std::abs(a - b) / std::max(1e-300, std::abs(b)));
    }
    add("energy homogeneity", worst <= 1e-12, worst);
  }
  {
    double worst = 0.0;
    for (double p : ps) {
      auto u = random_values(sq.num_vertices()), v = random_values(sq.num_vertices());
      std::vector<double> mid(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) mid[i] = 0.5 * (u[i] + v[i]);
      const double lhs = dirichlet_energy(sq, mid, p).value;
      const double rhs = 0.5 * (dirichlet_energy(sq, u, p).value + dirichlet_energy(sq, v, p).value);
      worst = std::max(worst, lhs - rhs);
    }
    add("energy convexity", worst <= 1e-12, worst);
  }
  {
    double worst = 0.0;
    for (double p : ps) {
      ScalarField f = make_field(random_values(sq.num_vertices()));
      const auto g = energy_gradient(sq, f, p, 1e-8);
      for (Index v = 0; v < sq.num_vertices(); v += 7) {
        const double h = 1e-6 * (1.0 + std::abs(f.values[static_cast<std::size_t>(v)]));
        auto up = f.values, dn = f.values;
        up[static_cast<std::size_t>(v)] += h;
        dn[static_cast<std::size_t>(v)] -= h;
        const double fd = (dirichlet_energy(sq, up, p, 1e-8).value - dirichlet_energy(sq, dn, p, 1e-8).value) / (2 * h);
        const double gv = g[static_cast<std::size_t>(v)];
        worst = std::max(worst, std::abs(fd - gv) / std::max(1e-8, std::abs(gv)));
      }
    }
    add("gradient vs finite differences", worst <= 1e-6, worst);
  }
  {
    double worst = 0.0;
    const ScalarField lin = sample_field(sq, [](const Point& x) { return 0.3 + 1.7 * x(0) - 0.4 * x(1); });
    for (double p : ps) worst = std::max(worst, weak_residual(sq, lin.values, p, interior_mask(sq)));
    add("linear field residual", worst <= 1e-12, worst);
  }
  {
    double worst = 0.0;
    SolverParams sp;
    sp.p = 2.0;
    for (int i = 0; i < 3; ++i) {
      ScalarField h = make_field(random_values(sq.num_vertices()));
      auto a = solve_dirichlet(sq, h, sp);
      auto b = solve_p2_direct(sq, h);
      for (std::size_t k = 0; k < a.field.values.size(); ++k)
        worst = std::max(worst, std::abs(a.field.values[k] - b.field.values[k]));
    }
    add("p = 2 cross-check", worst <= 1e-8, worst);
  }
  {
    const Region full = full_region(ann);
    const NodeSet& inner = ann.node_label("inner");
    double hom = 0.0, mono = 0.0, sub = 0.0;
    for (double p : ps) {
      SolverParams sp;
      sp.p = p;
      auto psi = random_values(ann.num_vertices());
      const double lam = 0.5 + 2.0 * std::abs(unif(rng));
      auto lpsi = psi;
      for (auto& x : lpsi) x *= lam;
      const double c1 = capacity_compact(ann, inner, full, psi, sp).value;
      const double c2 = capacity_compact(ann, inner, full, lpsi, sp).value;
      hom = std::max(hom, std::abs(c2 - std::pow(lam, p) * c1) / std::max(1e-300, std::pow(lam, p) * c1));

      NodeSet small(inner.begin(), inner.begin() + static_cast<std::ptrdiff_t>(inner.size() / 2));
      const double cs = capacity_compact(ann, small, full, psi, sp).value;
      mono = std::max(mono, cs - c1);

      auto psi2 = random_values(ann.num_vertices());
      std::vector<double> sum(psi.size());
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = psi[k] + psi2[k];
      const double a = std::pow(capacity_compact(ann, inner, full, sum, sp).value, 1.0 / p);
      const double b = std::pow(c1, 1.0 / p) + std::pow(capacity_compact(ann, inner, full, psi2, sp).value, 1.0 / p);
      sub = std::max(sub, a - b);
    }
    add("capacity homogeneity", hom <= 1e-10, hom);
    add("capacity monotonicity", mono <= 1e-8, mono);
    add("capacity subadditivity", sub <= 1e-6, sub);
  }
  {
    const double v0 = total_volume(sq);
    const double v1 = total_volume(refine(sq));
    add("refinement preserves volume", std::abs(v1 - v0) <= 1e-12, std::abs(v1 - v0));
  }
  return lines;
}

}  // namespace pcap::cli
