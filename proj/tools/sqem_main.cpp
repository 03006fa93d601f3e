// Command-line front end: run <config> | preset <name> | list.

#include "sqem/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>

namespace {

struct Overrides {
  std::string out;
  std::string format;
  std::uint64_t seed = 0;
  int jobs = 0;
  bool timing = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--out", o.out, "Output file (default: standard output)");
  cmd->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--seed", o.seed, "Base seed for sampled protocols");
  cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--timing", o.timing, "Record wall_time_ms (output is then run dependent)");
}

void apply(sqem::ExperimentConfig& c, const Overrides& o, const CLI::App* cmd) {
  if (!o.out.empty()) c.out = o.out;
  if (!o.format.empty()) c.format = o.format == "json" ? sqem::OutputFormat::Json : sqem::OutputFormat::Csv;
  if (cmd->count("--seed")) c.seed = o.seed;
  if (o.jobs > 0) c.jobs = o.jobs;
  if (o.timing) c.timing = true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Superposed quantum error mitigation experiments"};
  app.require_subcommand(1);

  Overrides run_o, preset_o;
  std::string config_path, preset_name;
  bool print_config = false;

  auto* run = app.add_subcommand("run", "Run a JSON experiment config");
  run->add_option("config", config_path, "Config file")->required();
  add_overrides(run, run_o);

  auto* preset = app.add_subcommand("preset", "Run a named figure preset");
  preset->add_option("name", preset_name, "Preset name")->required();
  preset->add_flag("--print-config", print_config, "Print the preset config instead of running it");
  add_overrides(preset, preset_o);

  auto* list = app.add_subcommand("list", "List presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (list->parsed()) {
      for (const auto& p : sqem::list_presets())
        std::cout << fmt::format("{:<24} {}{}\n", p.name, p.monte_carlo ? "[monte carlo] " : "", p.description);
      return 0;
    }
    sqem::ExperimentConfig cfg;
    if (run->parsed()) {
      cfg = sqem::load_config(config_path);
      apply(cfg, run_o, run);
    } else {
      if (print_config) {
        std::cout << sqem::preset_json(preset_name) << "\n";
        return 0;
      }
      cfg = sqem::preset_config(preset_name);
      apply(cfg, preset_o, preset);
    }
    sqem::run_experiment(cfg, std::cout);
  } catch (const sqem::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const sqem::CapExceeded& e) {
    std::cerr << "cap exceeded: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
