// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "lbt/autodiff/graph.hpp"
#include "lbt/model/weights.hpp"

namespace lbt::model {

enum class Activation : std::uint8_t { kTanh, kRelu };

struct StudentSpec {
  std::size_t input_dim = 2;
  std::size_t classes = 3;
  std::vector<std::size_t> hidden;  // empty: a single linear layer
  Activation activation = Activation::kTanh;
  std::string capacity = "small";
  bool operator==(const StudentSpec&) const = default;
};

/// "small" = one hidden layer of 8, "large" = two hidden layers of 16.
StudentSpec student_preset(const std::string& capacity, std::size_t input_dim, std::size_t classes);
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

/// Fixed feed-forward classifier; weights named layer{i}.w / layer{i}.b.
class StudentNet {
 public:
  explicit StudentNet(StudentSpec spec);

  const StudentSpec& spec() const { return spec_; }
  const WeightLayout& layout() const { return layout_; }

  ad::NodeId build(ad::Graph& graph, std::span<const ad::NodeId> weights, ad::NodeId x) const;
  ad::Tensor forward(const WeightSet& weights, const ad::Tensor& x) const;

 private:
  StudentSpec spec_;
  WeightLayout layout_;
};

}  // namespace lbt::model
