// SPDX-License-Identifier: Apache-2.0
//
// Everything one command invocation needs, addressable by flat dotted keys
// ("lambda", "teacher.hidden", "data.label_noise", ...).
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbt/data/dataset.hpp"
#include "lbt/engine/config.hpp"

namespace lbt::cli {

struct GradcheckOptions {
  std::size_t instances = 20;
  double h = 1e-4;
  double min_cosine = 0.99;       // engine finite-difference mode
  double max_exact_error = 1e-4;  // exact-unrolled mode, relative L2
  std::string corrupt = "none";   // "none" | "sign_flip"
  bool degenerate = false;        // empty validation sets: O_v is constant
};

struct EvalOptions {
  std::string genotype;  // path to a genotype.json
  std::size_t epochs = 200;
  double lr = 0.1;
  std::size_t cells = 1;
};

struct RunConfig {
  engine::SearchConfig search;
  std::string student_capacity = "small";
  std::vector<std::size_t> student_hidden;  // empty: the capacity preset
  std::string student_activation = "tanh";

  data::TaskSpec task;
  /// Directory with teacher_train.csv, teacher_val.csv, student_train.csv,
  /// student_val.csv, unlabeled.csv and test.csv; empty to generate.
  std::string data_dir;

  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int ablate_setting = 1;
  std::string sweep_parameter = "lambda";
  std::vector<double> sweep_values{0.0, 0.5, 1.0, 2.0, 4.0};
  GradcheckOptions gradcheck;
  EvalOptions eval;

  /// Single-run seed: drives initialisation, batching and data generation.
  std::uint64_t seed() const { return search.seed; }
  void set_seed(std::uint64_t s);
};

/// Every recognised key, in a fixed order.
const std::vector<std::string>& config_keys();

/// Sets one key; throws ConfigError for unknown keys or ill-typed values.
void set_key(RunConfig& c, const std::string& key, const nlohmann::json& value);

/// Applies a JSON document. Nested objects are flattened into dotted keys and
/// a run manifest is accepted in place of a config file. Unknown keys are
/// reported together.
void apply_json(RunConfig& c, const nlohmann::json& doc);

/// Parses "key=value"; the value is read as JSON when possible, else as a string.
void apply_override(RunConfig& c, const std::string& assignment);

RunConfig load_config(const std::filesystem::path& path);

/// All keys with their resolved values.
nlohmann::json to_json(const RunConfig& c);

/// Search config with the student resolved and data dimensions filled in.
engine::SearchConfig resolved_search(const RunConfig& c, const data::DataBundle& bundle);

/// Generated or loaded from data_dir; deterministic in the seed.
data::DataBundle load_data(const RunConfig& c);

}  // namespace lbt::cli
