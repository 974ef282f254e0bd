// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "lbt/autodiff/tensor.hpp"

namespace lbt::ad {

/// Tolerance on target row sums accepted by soft_cross_entropy.
inline constexpr double kDistributionTolerance = 1e-6;

/// -sum_k target_k * log(max(pred_k, kLogGuard)), averaged over rows.
/// Both arguments are [n x K]; each target row must be a distribution.
/// An empty batch yields 0.
double soft_cross_entropy(const Tensor& predicted, const Tensor& target);

/// Row-wise softmax, max-shifted.
Tensor softmax(const Tensor& logits);

/// [n x K] one-hot encoding of integer labels.
Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace lbt::ad
