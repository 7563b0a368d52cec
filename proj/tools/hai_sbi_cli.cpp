#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hai_sbi/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulation-based inference for facility transmission models", "hai_sbi"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  int threads = 1;
  std::optional<std::uint64_t> seed;

  for (const auto& name : hai_sbi::cli::commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    auto* out_opt = sub->add_option("--out", out, "output directory");
    if (name != "validate") {
      out_opt->required();
    }
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "overrides the config seed");
  }

  CLI11_PARSE(app, argc, argv);

  hai_sbi::cli::Options opt;
  opt.config = config;
  opt.out = out;
  opt.threads = threads;
  opt.seed = seed;
  return hai_sbi::cli::run(app.get_subcommands().front()->get_name(), opt);
}
