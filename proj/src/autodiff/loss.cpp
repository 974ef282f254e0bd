// SPDX-License-Identifier: Apache-2.0
#include "lbt/autodiff/loss.hpp"

#include <algorithm>
#include <cmath>

#include "lbt/autodiff/graph.hpp"
#include "lbt/error.hpp"

namespace lbt::ad {

double soft_cross_entropy(const Tensor& predicted, const Tensor& target) {
  if (!predicted.same_shape(target)) {
    throw ShapeError("soft_cross_entropy: prediction " + predicted.shape_string() + " vs target " +
                     target.shape_string());
  }
  if (predicted.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < target.rows(); ++i) {
    double row_sum = 0.0;
    double row_loss = 0.0;
    for (std::size_t k = 0; k < target.cols(); ++k) {
      const double t = target(i, k);
      if (t < 0.0) throw Error("soft_cross_entropy: negative target in row " + std::to_string(i));
      row_sum += t;
      row_loss -= t * std::log(std::max(predicted(i, k), kLogGuard));
    }
    if (std::abs(row_sum - 1.0) > kDistributionTolerance) {
      throw Error("soft_cross_entropy: target row " + std::to_string(i) + " sums to " + std::to_string(row_sum));
    }
    total += row_loss;
  }
  return total / static_cast<double>(target.rows());
}

Tensor softmax(const Tensor& logits) {
  Graph g;
  const NodeId x = g.input("logits", logits.cols());
  const NodeId y = g.softmax(x);
  return forward(g, Bindings{}, logits, y);
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw Error("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

}  // namespace lbt::ad
