// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lbt/autodiff/graph.hpp"
#include "lbt/autodiff/vec.hpp"

namespace lbt::model {

struct WeightShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  /// Fan-in used by the initialiser (rows of the matching weight matrix).
  std::size_t fan_in = 1;
  bool operator==(const WeightShape&) const = default;
};

/// Ordered list of weight shapes. Order is registration order and defines the
/// canonical layout of flat vectors.
class WeightLayout {
 public:
  void add(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in);
  /// w [in x out] followed by b [1 x out].
  void add_linear(const std::string& prefix, std::size_t in, std::size_t out);

  const std::vector<WeightShape>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total() const;
  bool operator==(const WeightLayout&) const = default;

 private:
  std::vector<WeightShape> entries_;
};

/// Trainable weights of one network in a fixed layout.
class WeightSet {
 public:
  WeightSet() = default;
  explicit WeightSet(WeightLayout layout);  // all zeros

  const WeightLayout& layout() const { return layout_; }
  const std::vector<ad::Tensor>& tensors() const { return tensors_; }
  ad::Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const ad::Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  const ad::Tensor& find(std::string_view name) const;

  vec::Vector flat() const;
  static WeightSet from_flat(const WeightLayout& layout, std::span<const double> values);

  /// this + s * direction, direction in flat layout order.
  WeightSet shifted(double s, std::span<const double> direction) const;

  /// Adds every tensor to `bindings` under prefix + name.
  void bind(ad::Bindings& bindings, const std::string& prefix) const;
  void rebind(ad::Bindings& bindings, const std::string& prefix) const;

  bool operator==(const WeightSet&) const = default;

 private:
  WeightLayout layout_;
  std::vector<ad::Tensor> tensors_;
};

/// Parameter placeholders named prefix + entry name, in layout order.
std::vector<ad::NodeId> declare(ad::Graph& graph, const WeightLayout& layout, const std::string& prefix);

/// Every value drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); deterministic per seed.
WeightSet init_weights(const WeightLayout& layout, std::uint64_t seed);

}  // namespace lbt::model
