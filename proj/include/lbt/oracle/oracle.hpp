// SPDX-License-Identifier: Apache-2.0
//
// Reference hypergradients that share no approximation with the engine's
// finite-difference Hessian-vector products.
#pragma once

#include <functional>

#include <nlohmann/json.hpp>

#include "lbt/engine/engine.hpp"

namespace lbt::oracle {

struct CoordinateRow {
  std::size_t index = 0;
  double candidate = 0.0;
  double reference = 0.0;
};

struct GradComparison {
  double cosine = 0.0;
  double relative_l2 = 0.0;
  double max_abs_error = 0.0;
  double candidate_norm = 0.0;
  double reference_norm = 0.0;
  std::vector<CoordinateRow> table;
};

/// Throws ShapeError on a length mismatch and Error when the reference is zero.
GradComparison compare(std::span<const double> candidate, std::span<const double> reference, bool with_table = false);

nlohmann::json to_json(const GradComparison& c);

using ArchObjective = std::function<double(const model::ArchParams&)>;

/// Central differences of `objective` over every architecture scalar. With
/// threads > 1 coordinates are split across workers; each coordinate is
/// computed independently so the result does not depend on the split.
vec::Vector fd_hypergradient(const ArchObjective& objective, const model::ArchParams& arch, double h = 1e-4,
                             std::size_t threads = 1);

/// O_v(A) with full recomputation of T'(A), the pseudo-labels and S'(A). The
/// pseudo-labeling forward keeps the architecture at `arch`.
ArchObjective composed_objective(const engine::Engine& engine, const model::WeightSet& t, const model::WeightSet& s,
                                 const model::ArchParams& arch, const engine::StageData& data);

/// Exact reverse-mode gradient of O_v through both virtual steps.
vec::Vector unrolled_hypergradient(const engine::Engine& engine, const model::WeightSet& t, const model::WeightSet& s,
                                   const model::ArchParams& arch, const engine::StageData& data);

/// A small seeded problem with every piece an oracle comparison needs.
struct Instance {
  engine::Engine engine;
  model::WeightSet teacher;
  model::WeightSet student;
  model::ArchParams arch;
  engine::StageData data;
};

/// Teacher 2-3-3 with a 2-node cell, student 2-4-3, gaussian blobs with a
/// dozen points per split: 171 parameters in total. Architecture scalars and
/// weights are random per seed; `config` supplies the rates and modes.
Instance tiny_instance(std::uint64_t seed, engine::SearchConfig config = {});

}  // namespace lbt::oracle
