// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lbt/data/dataset.hpp"
#include "lbt/model/teacher.hpp"

namespace lbt::engine {

struct RetrainOptions {
  std::size_t epochs = 200;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

struct RetrainResult {
  model::WeightSet weights;
  double initial_test_error = 0.0;
  double test_error = 0.0;
  std::vector<double> train_loss;  // one entry per epoch, before its step
};

/// Trains a discrete network from fresh weights with full-batch gradient
/// descent on `train` and reports its error on `test`.
RetrainResult retrain(const model::TeacherNet& net, const data::Dataset& train, const data::Dataset& test,
                      std::size_t classes, const RetrainOptions& options);

}  // namespace lbt::engine
