// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbt/autodiff/tensor.hpp"

namespace lbt::model {

/// Candidate operations on a cell edge. The order is the tie-break order of
/// genotype derivation (lowest index wins).
enum class CandidateOp : std::uint8_t { kIdentity = 0, kZero, kLinear, kLinearTanh, kLinearRelu };

inline constexpr std::size_t kNumCandidates = 5;
inline constexpr std::array<CandidateOp, kNumCandidates> kCandidates = {
    CandidateOp::kIdentity, CandidateOp::kZero, CandidateOp::kLinear, CandidateOp::kLinearTanh,
    CandidateOp::kLinearRelu};

std::string_view candidate_name(CandidateOp op);
CandidateOp parse_candidate(std::string_view name);
bool has_weights(CandidateOp op);

struct Edge {
  std::size_t from = 0;  // 0 is the cell input
  std::size_t to = 0;    // 1..nodes
  bool operator==(const Edge&) const = default;
};

/// Edges of a cell with `nodes` intermediate nodes, each fed by every
/// predecessor (including the cell input). Ordered by target, then source.
std::vector<Edge> cell_edges(std::size_t nodes);

/// Architecture scalars: one row per edge, one column per candidate op.
/// Shared by every replicated cell.
class ArchParams {
 public:
  ArchParams() = default;
  ArchParams(std::size_t nodes, std::size_t cells);  // all zeros (uniform mixing)
  ArchParams(std::size_t nodes, std::size_t cells, ad::Tensor scalars);

  std::size_t nodes() const { return nodes_; }
  std::size_t cells() const { return cells_; }
  std::size_t num_edges() const { return scalars_.rows(); }
  std::vector<Edge> edges() const { return cell_edges(nodes_); }

  const ad::Tensor& scalars() const { return scalars_; }
  ad::Tensor& scalars() { return scalars_; }
  double& at(std::size_t edge, CandidateOp op) { return scalars_(edge, static_cast<std::size_t>(op)); }
  double at(std::size_t edge, CandidateOp op) const { return scalars_(edge, static_cast<std::size_t>(op)); }

  /// Per-edge softmax of the scalars.
  ad::Tensor mixing_weights() const;

  bool operator==(const ArchParams&) const = default;

 private:
  std::size_t nodes_ = 0;
  std::size_t cells_ = 1;
  ad::Tensor scalars_;
};

ArchParams init_arch(std::size_t nodes, std::size_t cells, std::uint64_t seed);

/// Discrete architecture: one selected op per edge, never kZero.
struct Genotype {
  std::size_t nodes = 0;
  std::size_t cells = 1;
  std::vector<CandidateOp> ops;
  bool operator==(const Genotype&) const = default;
};

/// Per edge, argmax over the non-zero candidates; ties go to the lowest index.
Genotype derive_genotype(const ArchParams& arch);

/// {"nodes", "cells", "candidates", "edges": [{"from","to","op"}], "arch_scalars"}.
nlohmann::json genotype_to_json(const Genotype& genotype, const ArchParams* arch = nullptr);
Genotype genotype_from_json(const nlohmann::json& doc);

}  // namespace lbt::model
