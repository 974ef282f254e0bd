// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbt/cli/run_config.hpp"
#include "lbt/engine/engine.hpp"

namespace lbt::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitDivergence = 3,
  kExitGradcheck = 4,
};

struct Invocation {
  std::string command;  // search | ablate | sweep | gradcheck | eval
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::vector<std::string> overrides;  // key=value, applied in order
  bool quiet = false;
};

/// Runs one command and maps failures to exit codes; diagnostics go to `err`.
int run(const Invocation& inv, std::ostream& out, std::ostream& err);

/// Output directory: --out, else $LBT_OUT_DIR/<command>, else runs/<command>.
std::filesystem::path output_dir(const Invocation& inv);

/// Final configuration: file, then overrides, then --seed.
RunConfig resolve_config(const Invocation& inv);

/// One search run written to `dir`: manifest.json, trace.jsonl, timing.jsonl,
/// genotype.json and metrics.json.
engine::SearchResult search_run(const RunConfig& config, const std::string& command, const std::filesystem::path& dir);

nlohmann::json trace_json(const engine::StepTrace& t);

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace lbt::cli
