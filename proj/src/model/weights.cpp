// SPDX-License-Identifier: Apache-2.0
#include "lbt/model/weights.hpp"

#include <cmath>

#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt::model {

void WeightLayout::add(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  for (const auto& e : entries_) {
    if (e.name == name) throw BindingError("weight '" + name + "' registered twice");
  }
  entries_.push_back({std::move(name), rows, cols, fan_in});
}

void WeightLayout::add_linear(const std::string& prefix, std::size_t in, std::size_t out) {
  add(prefix + ".w", in, out, in);
  add(prefix + ".b", 1, out, in);
}

std::size_t WeightLayout::total() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.rows * e.cols;
  return n;
}

WeightSet::WeightSet(WeightLayout layout) : layout_(std::move(layout)) {
  tensors_.reserve(layout_.size());
  for (const auto& e : layout_.entries()) tensors_.emplace_back(e.rows, e.cols);
}

const ad::Tensor& WeightSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (layout_.entries()[i].name == name) return tensors_[i];
  }
  throw BindingError("no weight named '" + std::string(name) + "'");
}

vec::Vector WeightSet::flat() const {
  vec::Vector out;
  out.reserve(layout_.total());
  for (const auto& t : tensors_) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

WeightSet WeightSet::from_flat(const WeightLayout& layout, std::span<const double> values) {
  if (values.size() != layout.total()) {
    throw ShapeError("flat weight vector has " + std::to_string(values.size()) + " values, layout needs " +
                     std::to_string(layout.total()));
  }
  WeightSet w(layout);
  std::size_t offset = 0;
  for (auto& t : w.tensors_) {
    for (double& v : t.values()) v = values[offset++];
  }
  return w;
}

WeightSet WeightSet::shifted(double s, std::span<const double> direction) const {
  if (direction.size() != layout_.total()) {
    throw ShapeError("direction has " + std::to_string(direction.size()) + " values, layout needs " +
                     std::to_string(layout_.total()));
  }
  WeightSet out = *this;
  std::size_t offset = 0;
  for (auto& t : out.tensors_) {
    for (double& v : t.values()) v += s * direction[offset++];
  }
  return out;
}

void WeightSet::bind(ad::Bindings& bindings, const std::string& prefix) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) bindings.bind(prefix + layout_.entries()[i].name, tensors_[i]);
}

void WeightSet::rebind(ad::Bindings& bindings, const std::string& prefix) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) bindings.rebind(prefix + layout_.entries()[i].name, tensors_[i]);
}

std::vector<ad::NodeId> declare(ad::Graph& graph, const WeightLayout& layout, const std::string& prefix) {
  std::vector<ad::NodeId> ids;
  ids.reserve(layout.size());
  for (const auto& e : layout.entries()) ids.push_back(graph.parameter(prefix + e.name, e.rows, e.cols));
  return ids;
}

WeightSet init_weights(const WeightLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  WeightSet w(layout);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, layout.entries()[i].fan_in)));
    for (double& v : w.tensor(i).values()) v = rng.uniform(-bound, bound);
  }
  return w;
}

}  // namespace lbt::model
