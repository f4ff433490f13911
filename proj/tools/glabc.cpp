#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "glabc/commands.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeAbort = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global-Local ABC-MCMC sampler"};
  app.require_subcommand(1);
  app.set_version_flag("--version", glabc::kVersion);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string log_level = "info";

  const std::vector<std::pair<std::string, std::string>> commands{
      {"run", "Run MCMC chains and write traces plus a manifest"},
      {"tune", "Choose kernel settings by sequential uniform-design cESJD search"},
      {"reference", "Build a gridded reference posterior"},
      {"diagnose", "ESS, acceptance, ESJD and optional KL for a finished run"},
      {"grad-bench", "Replicate gradient estimators over a parameter grid"},
      {"bench", "Grid KL against a reference at checkpoint simulation budgets"},
  };
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    auto* s = sub->add_option("--seed", seed, "Root seed (overrides the config)");
    auto* t = sub->add_option("--threads", threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
    sub->add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    sub->callback([&, s, t] {
      seed_opt = s;
      threads_opt = t;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");
  glabc::CommandOptions opt;
  opt.out_dir = out_dir;
  if (seed_opt && seed_opt->count()) opt.seed = seed;
  if (threads_opt && threads_opt->count()) opt.threads = threads;

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const nlohmann::json doc = glabc::read_json_file(config_path);
    if (cmd == "run") {
      glabc::run_command(doc, opt);
    } else if (cmd == "tune") {
      glabc::tune_command(doc, opt);
    } else if (cmd == "reference") {
      glabc::reference_command(doc, opt);
    } else if (cmd == "diagnose") {
      glabc::diagnose_command(doc, opt);
    } else if (cmd == "grad-bench") {
      glabc::grad_bench_command(doc, opt);
    } else if (cmd == "bench") {
      glabc::bench_command(doc, opt);
    }
  } catch (const glabc::ConfigError& e) {
    std::cerr << "glabc " << cmd << ": config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "glabc " << cmd << ": config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "glabc " << cmd << ": invalid setting: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "glabc " << cmd << ": aborted: " << e.what() << '\n';
    return kRuntimeAbort;
  }
  return kOk;
}
