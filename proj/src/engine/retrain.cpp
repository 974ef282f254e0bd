// SPDX-License-Identifier: Apache-2.0
#include "lbt/engine/retrain.hpp"

#include <cmath>

#include "lbt/engine/engine.hpp"
#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt::engine {

RetrainResult retrain(const model::TeacherNet& net, const data::Dataset& train, const data::Dataset& test,
                      std::size_t classes, const RetrainOptions& options) {
  if (!net.genotype()) throw ConfigError("retraining needs a discrete network");
  if (train.empty() || test.empty()) throw ConfigError("retraining needs non-empty train and test sets");
  if (!(options.lr >= 0.0)) throw ConfigError("retraining rate must be non-negative");

  ad::Graph g;
  const auto x = g.input("x", net.spec().input_dim);
  const auto y = g.input("y", classes);
  const auto weights = model::declare(g, net.layout(), "");
  const auto logits = net.build(g, weights, ad::NodeId{}, x);
  const auto loss = g.soft_cross_entropy(g.softmax(logits), y);
  const auto grads = g.gradients(loss, weights);
  std::vector<ad::NodeId> outputs{loss};
  outputs.insert(outputs.end(), grads.begin(), grads.end());

  RetrainResult r;
  r.weights = model::init_weights(net.layout(), derive_seed(options.seed, "eval.teacher"));
  r.initial_test_error = error_rate(net.forward(nullptr, r.weights, test.x), test.labels);
  const ad::Tensor targets = data::targets(train, classes);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    ad::Bindings b;
    b.bind("x", train.x).bind("y", targets);
    r.weights.bind(b, "");
    const auto values = ad::evaluate(g, b, outputs);
    r.train_loss.push_back(values[0][0]);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto w = r.weights.tensor(i).values();
      const auto d = values[i + 1].values();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= options.lr * d[j];
    }
  }
  r.test_error = error_rate(net.forward(nullptr, r.weights, test.x), test.labels);
  return r;
}

}  // namespace lbt::engine
