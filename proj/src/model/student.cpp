// SPDX-License-Identifier: Apache-2.0
#include "lbt/model/student.hpp"

#include "lbt/error.hpp"

namespace lbt::model {

StudentSpec student_preset(const std::string& capacity, std::size_t input_dim, std::size_t classes) {
  StudentSpec s{.input_dim = input_dim, .classes = classes, .capacity = capacity};
  if (capacity == "small") {
    s.hidden = {8};
  } else if (capacity == "large") {
    s.hidden = {16, 16};
  } else {
    throw ConfigError("student capacity must be 'small' or 'large', got '" + capacity + "'");
  }
  return s;
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

StudentNet::StudentNet(StudentSpec spec) : spec_(std::move(spec)) {
  if (spec_.input_dim == 0 || spec_.classes < 2) throw ConfigError("student needs input_dim > 0 and >= 2 classes");
  std::size_t in = spec_.input_dim;
  std::size_t i = 0;
  for (std::size_t width : spec_.hidden) {
    if (width == 0) throw ConfigError("student hidden widths must be positive");
    layout_.add_linear("layer" + std::to_string(i++), in, width);
    in = width;
  }
  layout_.add_linear("layer" + std::to_string(i), in, spec_.classes);
}

ad::NodeId StudentNet::build(ad::Graph& g, std::span<const ad::NodeId> weights, ad::NodeId x) const {
  if (weights.size() != layout_.size()) {
    throw ShapeError("student expects " + std::to_string(layout_.size()) + " weight nodes, got " +
                     std::to_string(weights.size()));
  }
  if (g.node(x).cols != spec_.input_dim) {
    throw ShapeError("student input has " + std::to_string(g.node(x).cols) + " features, expected " +
                     std::to_string(spec_.input_dim));
  }
  ad::NodeId h = x;
  for (std::size_t layer = 0; layer * 2 < weights.size(); ++layer) {
    h = g.add_row(g.matmul(h, weights[2 * layer]), weights[2 * layer + 1]);
    if (2 * layer + 2 < weights.size()) h = spec_.activation == Activation::kTanh ? g.tanh(h) : g.relu(h);
  }
  return h;
}

ad::Tensor StudentNet::forward(const WeightSet& weights, const ad::Tensor& x) const {
  if (weights.layout() != layout_) throw ShapeError("weight set does not match the student layout");
  ad::Graph g;
  const ad::NodeId in = g.input("x", spec_.input_dim);
  const auto w = declare(g, layout_, "");
  ad::Bindings b;
  weights.bind(b, "");
  return ad::forward(g, b, x, build(g, w, in));
}

}  // namespace lbt::model
