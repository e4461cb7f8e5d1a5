#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "pcap/run.hpp"

using pcap::cli::json;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p-harmonic functions, weighted p-capacities and the bounded-energy existence criterion"};
  app.set_version_flag("--version", pcap::cli::kToolVersion);

  std::string command, config_path, out_dir, formats, witness;
  double p = 0.0, tol = 0.0;
  int levels = 0;
  bool seed_check = false, print_defaults = false;
  app.add_option("command", command, "solve | capacity | criterion | poincare | study");
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* p_opt = app.add_option("--p", p, "exponent p > 1");
  auto* tol_opt = app.add_option("--tol", tol, "weak-residual tolerance");
  auto* levels_opt = app.add_option("--levels", levels, "refinement levels of a study");
  app.add_option("--out", out_dir, "output directory (stdout when omitted)");
  app.add_option("--format", formats, "report formats, e.g. json,csv");
  app.add_option("--witness", witness, "constants | none | file:<path>");
  app.add_flag("--seed-check", seed_check, "run the invariant suite");
  app.add_flag("--print-defaults", print_defaults, "print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pcap::cli::kExitValidation;
  }

  if (print_defaults) {
    std::cout << pcap::cli::default_config().dump(2) << "\n";
    return 0;
  }

  pcap::cli::RunConfig cfg;
  try {
    json patch = json::object();
    if (!config_path.empty()) cfg = pcap::cli::load_config_file(config_path);
    if (!command.empty()) patch["command"] = command;
    if (*p_opt) patch["solver"]["p"] = p;
    if (*tol_opt) patch["solver"]["tol_residual"] = tol;
    if (*levels_opt) patch["study"]["levels"] = levels;
    if (!out_dir.empty()) patch["output"]["dir"] = out_dir;
    if (!formats.empty()) patch["output"]["formats"] = split_csv(formats);
    if (!witness.empty()) {
      json w = {{"constants", false}, {"neumann", false}, {"zero", false}, {"files", json::array()}};
      if (witness == "constants")
        w["constants"] = true;
      else if (witness == "none")
        w["zero"] = true;
      else if (witness.rfind("file:", 0) == 0)
        w["files"].push_back(witness.substr(5));
      else
        throw pcap::cli::ConfigError("--witness must be constants, none or file:<path>");
      patch["witness"] = w;
    }
    pcap::cli::detail::merge(cfg.doc, patch, "flags", true);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pcap::cli::kExitValidation;
  }

  if (seed_check) {
    bool ok = true;
    for (const auto& line : pcap::cli::seed_check(cfg.doc.at("seed").get<std::uint64_t>())) {
      std::cout << (line.pass ? "PASS " : "FAIL ") << line.name << " (" << line.detail << ")\n";
      ok = ok && line.pass;
    }
    return ok ? 0 : pcap::cli::kExitSeedCheck;
  }
  return pcap::cli::run(cfg, std::cout, std::cerr);
}
