// SPDX-License-Identifier: Apache-2.0
#include "lbt/model/arch.hpp"

#include "lbt/autodiff/loss.hpp"
#include "lbt/error.hpp"

namespace lbt::model {

std::string_view candidate_name(CandidateOp op) {
  switch (op) {
    case CandidateOp::kIdentity: return "identity";
    case CandidateOp::kZero: return "zero";
    case CandidateOp::kLinear: return "linear";
    case CandidateOp::kLinearTanh: return "linear_tanh";
    case CandidateOp::kLinearRelu: return "linear_relu";
  }
  return "unknown";
}

CandidateOp parse_candidate(std::string_view name) {
  for (CandidateOp op : kCandidates) {
    if (candidate_name(op) == name) return op;
  }
  throw ParseError("unknown candidate operation '" + std::string(name) + "'");
}

bool has_weights(CandidateOp op) {
  return op == CandidateOp::kLinear || op == CandidateOp::kLinearTanh || op == CandidateOp::kLinearRelu;
}

std::vector<Edge> cell_edges(std::size_t nodes) {
  std::vector<Edge> edges;
  for (std::size_t to = 1; to <= nodes; ++to) {
    for (std::size_t from = 0; from < to; ++from) edges.push_back({from, to});
  }
  return edges;
}

ArchParams::ArchParams(std::size_t nodes, std::size_t cells)
    : ArchParams(nodes, cells, ad::Tensor(nodes * (nodes + 1) / 2, kNumCandidates)) {}

ArchParams::ArchParams(std::size_t nodes, std::size_t cells, ad::Tensor scalars)
    : nodes_(nodes), cells_(cells), scalars_(std::move(scalars)) {
  if (nodes == 0 || cells == 0) throw ConfigError("cell needs at least one node and one replica");
  const std::size_t edges = nodes * (nodes + 1) / 2;
  if (scalars_.rows() != edges || scalars_.cols() != kNumCandidates) {
    throw ShapeError("architecture scalars " + scalars_.shape_string() + " do not match " +
                     std::to_string(edges) + " edges x " + std::to_string(kNumCandidates) + " candidates");
  }
}

ad::Tensor ArchParams::mixing_weights() const { return ad::softmax(scalars_); }

ArchParams init_arch(std::size_t nodes, std::size_t cells, std::uint64_t /*seed*/) {
  return ArchParams(nodes, cells);
}

Genotype derive_genotype(const ArchParams& arch) {
  Genotype g{.nodes = arch.nodes(), .cells = arch.cells()};
  for (std::size_t e = 0; e < arch.num_edges(); ++e) {
    CandidateOp best = CandidateOp::kIdentity;
    bool found = false;
    for (CandidateOp op : kCandidates) {
      if (op == CandidateOp::kZero) continue;
      if (!found || arch.at(e, op) > arch.at(e, best)) {
        best = op;
        found = true;
      }
    }
    g.ops.push_back(best);
  }
  return g;
}

nlohmann::json genotype_to_json(const Genotype& genotype, const ArchParams* arch) {
  nlohmann::json doc;
  doc["nodes"] = genotype.nodes;
  doc["cells"] = genotype.cells;
  auto& candidates = doc["candidates"] = nlohmann::json::array();
  for (CandidateOp op : kCandidates) candidates.push_back(candidate_name(op));
  auto& edges = doc["edges"] = nlohmann::json::array();
  const auto topology = cell_edges(genotype.nodes);
  for (std::size_t e = 0; e < genotype.ops.size(); ++e) {
    edges.push_back({{"from", topology[e].from}, {"to", topology[e].to}, {"op", candidate_name(genotype.ops[e])}});
  }
  if (arch != nullptr) {
    auto& rows = doc["arch_scalars"] = nlohmann::json::array();
    for (std::size_t e = 0; e < arch->num_edges(); ++e) {
      auto row = nlohmann::json::array();
      for (double v : arch->scalars().row_span(e)) row.push_back(v);
      rows.push_back(std::move(row));
    }
  }
  return doc;
}

Genotype genotype_from_json(const nlohmann::json& doc) {
  try {
    Genotype g;
    g.nodes = doc.at("nodes").get<std::size_t>();
    g.cells = doc.value("cells", std::size_t{1});
    const auto topology = cell_edges(g.nodes);
    const auto& edges = doc.at("edges");
    if (edges.size() != topology.size()) {
      throw ParseError("genotype lists " + std::to_string(edges.size()) + " edges, a " + std::to_string(g.nodes) +
                       "-node cell has " + std::to_string(topology.size()));
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (edges[e].contains("from") && (edges[e].at("from").get<std::size_t>() != topology[e].from ||
                                        edges[e].at("to").get<std::size_t>() != topology[e].to)) {
        throw ParseError("genotype edge " + std::to_string(e) + " is out of canonical order");
      }
      const CandidateOp op = parse_candidate(edges[e].at("op").get<std::string>());
      if (op == CandidateOp::kZero) throw ParseError("genotype selects 'zero' on edge " + std::to_string(e));
      g.ops.push_back(op);
    }
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed genotype: ") + ex.what());
  }
}

}  // namespace lbt::model
