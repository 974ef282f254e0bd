// SPDX-License-Identifier: Apache-2.0
#include "lbt/model/teacher.hpp"

#include "lbt/error.hpp"

namespace lbt::model {

std::string edge_weight_prefix(std::size_t cell, std::size_t edge, CandidateOp op) {
  return "cell" + std::to_string(cell) + ".edge" + std::to_string(edge) + "." + std::string(candidate_name(op));
}

namespace {

void validate(const TeacherSpec& s) {
  if (s.input_dim == 0 || s.hidden == 0 || s.classes < 2 || s.nodes == 0 || s.cells == 0) {
    throw ConfigError("teacher needs positive input_dim, hidden, nodes, cells and at least 2 classes");
  }
}

}  // namespace

TeacherNet::TeacherNet(TeacherSpec spec) : spec_(spec) {
  validate(spec_);
  build_layout();
}

TeacherNet::TeacherNet(TeacherSpec spec, Genotype genotype) : spec_(spec), genotype_(std::move(genotype)) {
  validate(spec_);
  if (genotype_->nodes != spec_.nodes || genotype_->ops.size() != num_edges()) {
    throw ConfigError("genotype has " + std::to_string(genotype_->ops.size()) + " edges, teacher cell has " +
                      std::to_string(num_edges()));
  }
  for (CandidateOp op : genotype_->ops) {
    if (op == CandidateOp::kZero) throw ConfigError("genotype selects 'zero'");
  }
  build_layout();
}

void TeacherNet::build_layout() {
  layout_.add_linear("stem", spec_.input_dim, spec_.hidden);
  for (std::size_t c = 0; c < spec_.cells; ++c) {
    for (std::size_t e = 0; e < num_edges(); ++e) {
      for (CandidateOp op : ops_on(e)) {
        if (has_weights(op)) layout_.add_linear(edge_weight_prefix(c, e, op), spec_.hidden, spec_.hidden);
      }
    }
  }
  layout_.add_linear("head", spec_.hidden, spec_.classes);
}

std::vector<CandidateOp> TeacherNet::ops_on(std::size_t edge) const {
  if (genotype_) return {genotype_->ops[edge]};
  return {kCandidates.begin(), kCandidates.end()};
}

ad::NodeId TeacherNet::build(ad::Graph& g, std::span<const ad::NodeId> weights, ad::NodeId arch, ad::NodeId x) const {
  if (weights.size() != layout_.size()) {
    throw ShapeError("teacher expects " + std::to_string(layout_.size()) + " weight nodes, got " +
                     std::to_string(weights.size()));
  }
  if (g.node(x).cols != spec_.input_dim) {
    throw ShapeError("teacher input has " + std::to_string(g.node(x).cols) + " features, expected " +
                     std::to_string(spec_.input_dim));
  }
  std::size_t next = 0;
  auto linear = [&](ad::NodeId in) {
    const ad::NodeId w = weights[next++];
    const ad::NodeId b = weights[next++];
    return g.add_row(g.matmul(in, w), b);
  };

  ad::NodeId mix;
  if (!genotype_) {
    const auto& a = g.node(arch);
    if (a.rows != num_edges() || a.cols != kNumCandidates) {
      throw ShapeError("architecture node is " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                       ", cell needs " + std::to_string(num_edges()) + "x" + std::to_string(kNumCandidates));
    }
    mix = g.softmax(arch);
  }

  ad::NodeId h = linear(x);
  const auto edges = cell_edges(spec_.nodes);
  for (std::size_t c = 0; c < spec_.cells; ++c) {
    std::vector<ad::NodeId> states{h};
    std::vector<ad::NodeId> sums(spec_.nodes + 1);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const ad::NodeId in = states[edges[e].from];
      ad::NodeId out;
      for (CandidateOp op : ops_on(e)) {
        ad::NodeId y;
        switch (op) {
          case CandidateOp::kZero: continue;
          case CandidateOp::kIdentity: y = in; break;
          case CandidateOp::kLinear: y = linear(in); break;
          case CandidateOp::kLinearTanh: y = g.tanh(linear(in)); break;
          case CandidateOp::kLinearRelu: y = g.relu(linear(in)); break;
        }
        if (!genotype_) y = g.scale_by(y, g.element(mix, e, static_cast<std::size_t>(op)));
        out = out.valid() ? g.add(out, y) : y;
      }
      ad::NodeId& acc = sums[edges[e].to];
      acc = acc.valid() ? g.add(acc, out) : out;
      // Edges are ordered by target, so a node is complete once its last
      // incoming edge (from = to - 1) is processed.
      if (edges[e].from + 1 == edges[e].to) states.push_back(acc);
    }
    h = states.back();
  }
  const ad::NodeId logits = linear(h);
  return logits;
}

ad::Tensor TeacherNet::forward(const ArchParams* arch, const WeightSet& weights, const ad::Tensor& x) const {
  if (weights.layout() != layout_) throw ShapeError("weight set does not match the teacher layout");
  ad::Graph g;
  const ad::NodeId in = g.input("x", spec_.input_dim);
  const auto w = declare(g, layout_, "");
  ad::Bindings b;
  weights.bind(b, "");
  ad::NodeId a;
  if (!genotype_) {
    if (arch == nullptr) throw BindingError("supernet forward needs architecture scalars");
    a = g.parameter("arch", num_edges(), kNumCandidates);
    b.bind("arch", arch->scalars());
  }
  const ad::NodeId logits = build(g, w, a, in);
  return ad::forward(g, b, x, logits);
}

}  // namespace lbt::model
