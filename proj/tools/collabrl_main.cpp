#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "collabrl/errors.hpp"
#include "collabrl/presets.hpp"

int main(int argc, char** argv) {
  CLI::App app{"collabrl: collaboration-game solvers, micro-debate training and verifier calibration"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "execute a preset and write its output bundle");
  std::string preset;
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = "out";
  bool check = false;
  run->add_option("--preset", preset, "preset name (see list-presets)")->required();
  run->add_option("--config", config_path, "JSON config file merged over the defaults");
  run->add_option("--set", sets, "override a config key, e.g. --set trainer.iterations=20");
  run->add_option("--seed", seed, "master seed")->each([&](const std::string&) { seed_given = true; });
  run->add_option("--out", out_dir, "output directory root");
  run->add_flag("--check", check, "exit nonzero if any acceptance property fails");

  // report
  auto* rep = app.add_subcommand("report", "summarize a previously written bundle");
  std::string bundle_dir;
  rep->add_option("--bundle", bundle_dir, "bundle directory (out/<preset>)")->required();

  // list-presets
  auto* list = app.add_subcommand("list-presets", "list preset names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) {
      for (const std::string& name : collabrl::preset_names())
        std::cout << name << "  -  " << collabrl::preset_description(name) << "\n";
      return 0;
    }
    if (rep->parsed()) {
      collabrl::report_bundle(bundle_dir, std::cout);
      return 0;
    }

    nlohmann::json overrides = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config file " + config_path);
      overrides = nlohmann::json::parse(in);
    }
    for (const std::string& assignment : sets)
      overrides.merge_patch(collabrl::parse_set_override(assignment));

    std::optional<std::uint64_t> seed_override;
    if (seed_given) seed_override = seed;
    collabrl::OutputBundle bundle = collabrl::run_preset(preset, overrides, seed_override, out_dir);

    std::cout << "wrote " << bundle.dir.string() << "\n";
    for (const auto& [key, value] : bundle.manifest["summary"].items())
      std::cout << "  " << key << " = " << value << "\n";
    for (const auto& line : bundle.checks)
      std::cout << "  [" << (line.pass ? "PASS" : "FAIL") << "] " << line.name << " (value "
                << line.value << ", threshold " << line.threshold << ")\n";
    if (check && !bundle.all_passed()) return 2;
    return 0;
  } catch (const collabrl::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
