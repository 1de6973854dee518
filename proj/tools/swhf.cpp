#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "swhf/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = swhf::cli;

  CLI::App app{"Stochastic Wasserstein Hamiltonian flow toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out;
  bool quiet = false;
  bool print_config = false;

  for (const auto& name : cli::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)");
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_option("--out", out, "output directory, overrides the config");
    sub->add_option("-w,--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("-q,--quiet", quiet, "suppress progress output");
    sub->add_flag("--print-config", print_config, "print the effective config and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  auto* sub = app.get_subcommands().front();
  cli::Overrides over;
  over.subcommand = sub->get_name();
  if (sub->count("--seed")) over.seed = seed;
  if (sub->count("--workers")) over.workers = workers;
  if (sub->count("--out")) over.out = out;

  cli::RunConfig config;
  try {
    config = config_path.empty() ? cli::parse_config(nlohmann::json::object(), over)
                                 : cli::parse_config_file(config_path, over);
  } catch (const swhf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const swhf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (print_config) {
    std::cout << cli::to_json(config).dump(2) << "\n";
    return 0;
  }
  return cli::run(config, quiet ? std::cerr : std::cout, quiet);
}
