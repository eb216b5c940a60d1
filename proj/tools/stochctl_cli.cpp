// Command-line front end: stochctl <command> [--config FILE] [options].

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "stochctl/runner.hpp"

namespace {

stochctl::RunConfig load_config(const std::string& path) {
  if (path.empty()) return stochctl::RunConfig::defaults();
  std::ifstream in(path);
  if (!in) throw stochctl::Error(stochctl::ErrorKind::InvalidConfig, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw stochctl::Error(stochctl::ErrorKind::InvalidConfig, std::string("malformed JSON: ") + e.what());
  }
  return stochctl::RunConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Null controllability and actuator placement for stochastic heat equations"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string format = "json";
  std::uint64_t seed = 0;
  bool corrupt = false;
  bool quiet = false;

  app.add_subcommand("defaults", "Print the default configuration");
  for (const char* name : {"observability", "hum", "optimize", "verify", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_option("-o,--out", out_dir, "Output directory");
    sub->add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    sub->add_flag("--corrupt-adjoint", corrupt, "Perturb the adjoint (self-test of the checks)");
    sub->add_flag("-q,--quiet", quiet, "Do not print the report");
  }
  app.get_subcommand("optimize")->description("Optimise the actuator density and check the saddle point");
  app.get_subcommand("observability")->description("Decay, interpolation and observability constants");
  app.get_subcommand("hum")->description("Minimal-norm null control for a fixed density");
  app.get_subcommand("verify")->description("Run the invariant suites");
  app.get_subcommand("sweep")->description("Observability constant across region sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "defaults") {
    std::cout << stochctl::RunConfig::defaults().to_json().dump(2) << '\n';
    return 0;
  }

  stochctl::RunConfig config;
  try {
    config = load_config(config_path);
  } catch (const stochctl::Error& e) {
    std::cerr << "stochctl: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return stochctl::exit_code_for(e.kind());
  }

  stochctl::RunOptions options;
  options.out_dir = out_dir;
  options.format = format;
  if (app.get_subcommand(command)->count("--seed") > 0) options.seed = seed;
  options.corrupt_adjoint = corrupt;
  options.threads = stochctl::threads_from_environment();

  const stochctl::RunResult result = stochctl::run_command(command, config, options);
  if (!quiet) std::cout << result.report.dump(2) << '\n';
  if (result.report.contains("error")) {
    const auto& err = result.report["error"];
    std::cerr << "stochctl: " << err["kind"].get<std::string>() << ": "
              << err["message"].get<std::string>() << '\n';
  }
  for (const std::string& a : result.artifacts) std::cerr << "wrote " << a << '\n';
  return result.exit_code;
}
