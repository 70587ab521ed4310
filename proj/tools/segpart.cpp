#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "segpart/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"segregated spectral partitions with distance constraints"};
  app.require_subcommand(1);
  std::string config;
  bool verbose = false;
  for (const char* name : {"eig", "partition", "sweep", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration")->required();
    sub->add_flag("-v,--verbose", verbose, "progress on stderr");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : segpart::cli::kConfigError;
  }
  return segpart::cli::run(app.get_subcommands().front()->get_name(), config, verbose, std::cout, std::cerr);
}
