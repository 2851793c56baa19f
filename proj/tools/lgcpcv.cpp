#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lgcpcv/commands.hpp"

using namespace lgcpcv;

int main(int argc, char** argv) {
  CLI::App app{"Log-Gaussian Cox process fitting and point-process cross-validation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI run configuration")->required();
    sub->add_option("--seed", seed, "global seed (overrides [run] seed)");
    sub->add_option("--workers", workers, "worker threads (overrides [run] workers)")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory (overrides [run] out)");
  };
  auto* simulate = app.add_subcommand("simulate", "simulate a point pattern from the [simulate] scenario");
  auto* fit = app.add_subcommand("fit", "fit one model to the observed points");
  auto* crossval = app.add_subcommand("crossval", "K-fold thinning cross-validation of a model sweep");
  auto* rank = app.add_subcommand("rank", "rank models in crps_by_model.csv by CRPS");
  for (auto* s : {simulate, fit, crossval, rank}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig config = load_config(config_path);
    if (seed) config.seed = *seed;
    if (workers) config.workers = *workers;
    if (out) config.out = *out;
    if (simulate->parsed()) return cmd_simulate(config, std::cout);
    if (fit->parsed()) return cmd_fit(config, std::cout);
    if (crossval->parsed()) return cmd_crossval(config, std::cout);
    return cmd_rank(config, std::cout);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kExitPartial;
  }
}
