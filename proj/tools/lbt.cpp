// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lbt/cli/commands.hpp"

int main(int argc, char** argv) {
  using lbt::cli::Invocation;
  CLI::App app{"Learning-by-teaching architecture search on small synthetic tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", lbt::cli::kToolVersion);

  Invocation inv;
  std::string config, out;
  std::uint64_t seed = 0;
  std::string genotype;
  int setting = 0;
  std::string parameter;
  std::vector<double> values;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config file (or a run manifest)")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory (default $LBT_OUT_DIR/<command>)");
    cmd->add_option("--seed", seed, "seed; ablate and sweep run this seed only");
    cmd->add_option("--jobs", inv.jobs, "concurrent runs")->check(CLI::PositiveNumber);
    cmd->add_option("--set", inv.overrides, "KEY=VALUE override, repeatable")->take_all();
    cmd->add_flag("--quiet", inv.quiet, "print nothing but errors");
  };

  auto* search = app.add_subcommand("search", "run the three-stage search and write the derived genotype");
  common(search);
  auto* ablate = app.add_subcommand("ablate", "paired full vs ablated runs over matched seeds");
  common(ablate);
  ablate->add_option("--setting", setting, "1: student-only validation objective, 2: pseudo-labels only")
      ->check(CLI::IsMember({1, 2}));
  auto* sweep = app.add_subcommand("sweep", "mean error per value of lambda or gamma");
  common(sweep);
  sweep->add_option("--parameter", parameter, "lambda or gamma")->check(CLI::IsMember({"lambda", "gamma"}));
  sweep->add_option("--values", values, "values to sweep")->delimiter(',');
  auto* gradcheck = app.add_subcommand("gradcheck", "compare engine hypergradients with finite-difference oracles");
  common(gradcheck);
  auto* eval = app.add_subcommand("eval", "retrain a derived genotype from scratch and report test error");
  common(eval);
  eval->add_option("--genotype", genotype, "genotype.json from a search")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lbt::cli::kExitConfig;
  }

  CLI::App* cmd = app.get_subcommands().front();
  inv.command = cmd->get_name();
  if (!config.empty()) inv.config = config;
  if (!out.empty()) inv.out = out;
  if (cmd->count("--seed") > 0) inv.seed = seed;
  if (setting != 0) inv.overrides.push_back("ablate.setting=" + std::to_string(setting));
  if (!parameter.empty()) inv.overrides.push_back("sweep.parameter=" + nlohmann::json(parameter).dump());
  if (!values.empty()) inv.overrides.push_back("sweep.values=" + nlohmann::json(values).dump());
  if (!genotype.empty()) inv.overrides.push_back("eval.genotype=" + nlohmann::json(genotype).dump());
  return lbt::cli::run(inv, std::cout, std::cerr);
}
