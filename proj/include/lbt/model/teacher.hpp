// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>

#include "lbt/autodiff/graph.hpp"
#include "lbt/model/arch.hpp"
#include "lbt/model/weights.hpp"

namespace lbt::model {

struct TeacherSpec {
  std::size_t input_dim = 2;
  std::size_t hidden = 8;
  std::size_t classes = 3;
  std::size_t nodes = 4;
  std::size_t cells = 1;
  bool operator==(const TeacherSpec&) const = default;
};

/// Supernet: linear stem (input_dim -> hidden), `cells` replicated cells that
/// share the architecture scalars but own their weights, then a linear head.
/// Inside a cell, node j sums the mixed outputs of every edge (i -> j), node 0
/// is the cell input and the last node is the cell output.
///
/// Constructed from a Genotype, the same wiring keeps only the selected op per
/// edge with unit weight (the discrete, "carved out" network).
class TeacherNet {
 public:
  explicit TeacherNet(TeacherSpec spec);
  TeacherNet(TeacherSpec spec, Genotype genotype);

  const TeacherSpec& spec() const { return spec_; }
  const WeightLayout& layout() const { return layout_; }
  const std::optional<Genotype>& genotype() const { return genotype_; }
  std::size_t num_edges() const { return spec_.nodes * (spec_.nodes + 1) / 2; }

  /// Logits node. `weights` are this net's parameter nodes in layout order.
  /// `arch` is an [edges x candidates] node holding raw scalars; ignored for a
  /// discrete net.
  ad::NodeId build(ad::Graph& graph, std::span<const ad::NodeId> weights, ad::NodeId arch, ad::NodeId x) const;

  /// Convenience evaluation of the logits for a batch.
  ad::Tensor forward(const ArchParams* arch, const WeightSet& weights, const ad::Tensor& x) const;

 private:
  void build_layout();
  std::vector<CandidateOp> ops_on(std::size_t edge) const;

  TeacherSpec spec_;
  std::optional<Genotype> genotype_;
  WeightLayout layout_;
};

std::string edge_weight_prefix(std::size_t cell, std::size_t edge, CandidateOp op);

}  // namespace lbt::model
