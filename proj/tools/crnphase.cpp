#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "crnphase/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Phase reduction of stochastic chemical reaction network oscillators"};
  app.set_version_flag("--version", std::string(crnphase::tool_version));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool lenient = false;
  std::vector<std::pair<std::string, std::string>> overrides;
  auto set = [&](const char* key) {
    return [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); };
  };

  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_flag("--lenient", lenient, "ignore unknown configuration keys");
  app.add_option_function<std::string>("--seed", set("seed"), "master seed");
  app.add_option_function<std::string>("--out", set("out"), "output directory");
  app.add_option_function<std::string>("--workers", set("workers"), "worker threads (default: CRNPHASE_WORKERS or all cores)");
  app.add_option_function<std::vector<std::string>>(
      "--set",
      [&](const std::vector<std::string>& items) {
        for (const auto& item : items) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + item + "'");
          overrides.emplace_back(crnphase::trim(item.substr(0, eq)), item.substr(eq + 1));
        }
      },
      "override any configuration key (key=value)");

  auto common = [&](CLI::App* sub) {
    sub->add_option_function<std::string>("--model", set("model"), "reaction network file");
    sub->add_option_function<std::string>("--omega", set("omega"), "system size");
  };

  auto* simulate = app.add_subcommand("simulate", "simulate the jump process or the chemical Langevin equation");
  common(simulate);
  simulate->add_option_function<std::string>("--engine", set("engine"), "direct | time-change | cle");
  simulate->add_option_function<std::string>("--t-end", set("t_end"), "final time");
  simulate->add_option_function<std::string>("--x0", set("x0"), "initial concentrations, comma separated");

  auto* limit_cycle = app.add_subcommand("limit-cycle", "locate the limit cycle");
  common(limit_cycle);
  auto* floquet = app.add_subcommand("floquet", "Floquet exponents and the periodic basis P");
  common(floquet);
  auto* prc = app.add_subcommand("prc", "phase response curve");
  common(prc);

  auto* phase = app.add_subcommand("phase", "variational and linear phase along a simulated path");
  common(phase);
  phase->add_option_function<std::string>("--engine", set("engine"), "direct | time-change");
  phase->add_option_function<std::string>("--t-end", set("t_end"), "final time");
  phase->add_option_function<std::string>("--eta", set("eta"), "escape radius in the weighted norm");

  auto* escape = app.add_subcommand("escape", "escape probability sweep and scaling fit");
  escape->add_option_function<std::string>("--model", set("model"), "reaction network file");
  escape->add_option_function<std::string>("--omega-list", set("omega_list"), "system sizes, comma separated");
  escape->add_option_function<std::string>("--zeta-list", set("zeta_list"), "thresholds, comma separated");
  escape->add_option_function<std::string>("--horizon", set("horizon"), "time horizon");
  escape->add_option_function<std::string>("--replicas", set("replicas"), "replicas per design point");

  auto* benchmark = app.add_subcommand("benchmark", "Brusselator time series, phases and phase portrait");
  std::string system = "brusselator";
  benchmark->add_option("system", system, "benchmark system")->check(CLI::IsMember({"brusselator"}));
  common(benchmark);
  benchmark->add_option_function<std::string>("--t-end", set("t_end"), "final time");

  CLI11_PARSE(app, argc, argv);

  crnphase::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = crnphase::load_config(config_path, !lenient);
    for (const auto& [key, value] : overrides)
      if (!crnphase::apply_setting(cfg, key, value))
        throw crnphase::Error(crnphase::ErrorCode::invalid_argument, "unknown configuration key '" + key + "'");
  } catch (const crnphase::Error& e) {
    std::cerr << "{\"error\":\"" << crnphase::to_string(e.code()) << "\",\"message\":\"" << e.what() << "\"}\n";
    return 1;
  }
  return crnphase::run(app.get_subcommands().front()->get_name(), cfg);
}
