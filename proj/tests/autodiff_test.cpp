// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lbt/autodiff/graph.hpp"
#include "lbt/autodiff/loss.hpp"
#include "lbt/error.hpp"
#include "support/random_graph.hpp"

using lbt::ad::Bindings;
using lbt::ad::Graph;
using lbt::ad::NodeId;
using lbt::ad::Tensor;

namespace {

Tensor seeded(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  return lbt::testing::random_tensor(rng, r, c, 1.0);
}

}  // namespace

TEST(Forward, IdentityLinearNodeReturnsInput) {
  Graph g;
  const NodeId x = g.input("x", 3);
  const NodeId w = g.parameter("w", 3, 3);
  const NodeId y = g.matmul(x, w);
  Bindings params;
  params.bind("w", Tensor::identity(3));
  const Tensor v = Tensor::row({0.25, -1.5, 3.0});
  EXPECT_EQ(lbt::ad::forward(g, params, v, y), v);
}

TEST(Forward, SoftmaxOfZerosIsUniform) {
  const Tensor p = lbt::ad::softmax(Tensor::row({0.0, 0.0, 0.0}));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Forward, TwoLayerNetMatchesStraightLineArithmetic) {
  std::mt19937_64 rng(0);
  const Tensor w1 = seeded(rng, 3, 4), b1 = seeded(rng, 1, 4);
  const Tensor w2 = seeded(rng, 4, 2), b2 = seeded(rng, 1, 2);
  const Tensor input = seeded(rng, 5, 3);

  Graph g;
  const NodeId x = g.input("x", 3);
  const NodeId h = g.tanh(g.add_row(g.matmul(x, g.parameter("w1", 3, 4)), g.parameter("b1", 1, 4)));
  const NodeId y = g.add_row(g.matmul(h, g.parameter("w2", 4, 2)), g.parameter("b2", 1, 2));
  Bindings params;
  params.bind("w1", w1).bind("b1", b1).bind("w2", w2).bind("b2", b2);
  const Tensor out = lbt::ad::forward(g, params, input, y);

  for (std::size_t n = 0; n < 5; ++n) {
    double hidden[4];
    for (int j = 0; j < 4; ++j) {
      double s = b1(0, j);
      for (int i = 0; i < 3; ++i) s += input(n, i) * w1(i, j);
      hidden[j] = std::tanh(s);
    }
    for (int k = 0; k < 2; ++k) {
      double s = b2(0, k);
      for (int j = 0; j < 4; ++j) s += hidden[j] * w2(j, k);
      EXPECT_NEAR(out(n, k), s, 1e-14);
    }
  }
}

TEST(Forward, DoesNotMutateBindingsAndIsDeterministic) {
  auto rg = lbt::testing::make_random_graph(7, 6);
  const Bindings before = rg.bindings;
  const double a = lbt::ad::evaluate(rg.graph, rg.bindings, rg.loss).item();
  const double b = lbt::ad::evaluate(rg.graph, rg.bindings, rg.loss).item();
  EXPECT_EQ(a, b);
  for (NodeId p : rg.params) {
    const auto& name = rg.graph.node(p).name;
    EXPECT_EQ(*rg.bindings.find(name), *before.find(name));
  }
}

TEST(Forward, UnboundParameterIsAnError) {
  Graph g;
  const NodeId x = g.input("x", 2);
  const NodeId y = g.matmul(x, g.parameter("w", 2, 2));
  EXPECT_THROW(lbt::ad::forward(g, Bindings{}, Tensor(1, 2), y), lbt::BindingError);
}

TEST(Forward, ShapeMismatchIsAnError) {
  Graph g;
  const NodeId x = g.input("x", 2);
  const NodeId y = g.matmul(x, g.parameter("w", 2, 2));
  Bindings params;
  params.bind("w", Tensor(2, 2));
  EXPECT_THROW(lbt::ad::forward(g, params, Tensor(1, 3), y), lbt::ShapeError);

  Bindings wrong;
  wrong.bind("w", Tensor(3, 2));
  EXPECT_THROW(lbt::ad::forward(g, wrong, Tensor(1, 2), y), lbt::BindingError);
  EXPECT_THROW(g.matmul(g.parameter("a", 2, 3), g.parameter("b", 2, 3)), lbt::ShapeError);
}

TEST(Forward, NonFiniteIntermediateIsAnError) {
  Graph g;
  const NodeId x = g.input("x", 1);
  const NodeId y = g.tanh(g.scale(x, 1e308));
  EXPECT_THROW(lbt::ad::forward(g, Bindings{}, Tensor::row({10.0}), y), lbt::NonFiniteError);
}

TEST(Forward, DoubleBindingIsAnError) {
  Bindings b;
  b.bind("w", Tensor(1, 1));
  EXPECT_THROW(b.bind("w", Tensor(1, 1)), lbt::BindingError);
  Graph g;
  g.parameter("w", 1, 1);
  EXPECT_THROW(g.parameter("w", 1, 1), lbt::BindingError);
}

TEST(Gradient, ConstantLossGivesZeroVector) {
  Graph g;
  const NodeId w = g.parameter("w", 2, 3);
  const NodeId loss = g.sum_all(g.constant(Tensor(2, 2, 1.5)));
  (void)w;
  Bindings b;
  b.bind("w", Tensor(2, 3, 0.7));
  const std::string wrt[] = {"w"};
  const auto grad = lbt::ad::gradient(g, loss, wrt, b);
  ASSERT_EQ(grad.size(), 6u);
  for (double v : grad) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, HalfSquaredNormGivesWeightsExactly) {
  Graph g;
  const NodeId w = g.parameter("w", 2, 3);
  const NodeId loss = g.scale(g.sum_all(g.mul(w, w)), 0.5);
  std::mt19937_64 rng(3);
  const Tensor value = seeded(rng, 2, 3);
  Bindings b;
  b.bind("w", value);
  const std::string wrt[] = {"w"};
  const auto grad = lbt::ad::gradient(g, loss, wrt, b);
  for (std::size_t i = 0; i < value.size(); ++i) EXPECT_EQ(grad[i], value[i]);
}

TEST(Gradient, SoftmaxCrossEntropyNetMatchesCentralDifferences) {
  std::mt19937_64 rng(0);
  lbt::testing::RandomGraph rg;
  Graph& g = rg.graph;
  const NodeId w1 = g.parameter("w1", 2, 4), b1 = g.parameter("b1", 1, 4);
  const NodeId w2 = g.parameter("w2", 4, 3), b2 = g.parameter("b2", 1, 3);
  rg.params = {w1, b1, w2, b2};
  rg.bindings.bind("w1", seeded(rng, 2, 4)).bind("b1", seeded(rng, 1, 4));
  rg.bindings.bind("w2", seeded(rng, 4, 3)).bind("b2", seeded(rng, 1, 3));
  const NodeId x = g.constant(seeded(rng, 6, 2));
  const int labels[] = {0, 1, 2, 2, 1, 0};
  const NodeId y = g.constant(lbt::ad::one_hot(labels, 3));
  const NodeId logits = g.add_row(g.matmul(g.tanh(g.add_row(g.matmul(x, w1), b1)), w2), b2);
  rg.loss = g.soft_cross_entropy(g.softmax(logits), y);

  const auto result = lbt::testing::check_gradients(rg, 1e-5);
  EXPECT_EQ(result.checked, 8u + 4u + 12u + 3u);
  EXPECT_LE(result.worst_relative_error, 1e-5);
}

TEST(Gradient, RandomGraphsMatchCentralDifferences) {
  int graphs = 0;
  for (int depth : {2, 5, 9}) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      auto rg = lbt::testing::make_random_graph(1000 * depth + seed, depth);
      const auto result = lbt::testing::check_gradients(rg);
      EXPECT_LE(result.worst_relative_error, 1e-5) << "depth " << depth << " seed " << seed;
      ++graphs;
    }
  }
  EXPECT_GE(graphs, 100);
}

TEST(Gradient, IsBitwiseDeterministic) {
  auto a = lbt::testing::make_random_graph(11, 8);
  auto b = lbt::testing::make_random_graph(11, 8);
  const auto ga = lbt::ad::evaluate(a.graph, a.bindings, a.graph.gradients(a.loss, a.params));
  const auto gb = lbt::ad::evaluate(b.graph, b.bindings, b.graph.gradients(b.loss, b.params));
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(ga[i], gb[i]);
}

TEST(Gradient, IsLinearInTheLoss) {
  auto rg = lbt::testing::make_random_graph(5, 6);
  Graph& g = rg.graph;
  const NodeId second = g.sum_all(g.tanh(rg.params.front()));
  const double alpha = 0.75, beta = -2.5;
  const NodeId combined = g.add(g.scale(rg.loss, alpha), g.scale(second, beta));
  const auto g1 = lbt::ad::evaluate(g, rg.bindings, g.gradients(rg.loss, rg.params));
  const auto g2 = lbt::ad::evaluate(g, rg.bindings, g.gradients(second, rg.params));
  const auto gc = lbt::ad::evaluate(g, rg.bindings, g.gradients(combined, rg.params));
  for (std::size_t p = 0; p < rg.params.size(); ++p) {
    for (std::size_t i = 0; i < gc[p].size(); ++i) {
      EXPECT_NEAR(gc[p][i], alpha * g1[p][i] + beta * g2[p][i], 1e-12);
    }
  }
}

TEST(Gradient, NonScalarLossAndUnknownParameterAreErrors) {
  Graph g;
  const NodeId w = g.parameter("w", 2, 2);
  EXPECT_THROW(g.gradients(g.tanh(w), std::span<const NodeId>(&w, 1)), lbt::ShapeError);
  Bindings b;
  b.bind("w", Tensor(2, 2));
  const std::string wrt[] = {"nope"};
  EXPECT_THROW(lbt::ad::gradient(g, g.sum_all(w), wrt, b), lbt::BindingError);
}

TEST(Gradient, CanonicalOrderIsRegistrationOrder) {
  Graph g;
  const NodeId a = g.parameter("a", 1, 1);
  const NodeId b = g.parameter("b", 1, 1);
  const NodeId loss = g.add(g.scale(a, 2.0), g.scale(b, 3.0));
  Bindings bind;
  bind.bind("a", Tensor::scalar(1.0)).bind("b", Tensor::scalar(1.0));
  const std::string wrt[] = {"b", "a"};
  const auto grad = lbt::ad::gradient(g, loss, wrt, bind);
  EXPECT_EQ(grad, (std::vector<double>{2.0, 3.0}));
}

// Gradient nodes are ordinary nodes, so differentiating a directional
// derivative gives a Hessian-vector product. Checked against central
// differences of the first-order gradient.
TEST(Gradient, SecondOrderMatchesDifferencesOfGradients) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rg = lbt::testing::make_random_graph(500 + seed, 5);
    Graph& g = rg.graph;
    const auto grads = g.gradients(rg.loss, rg.params);
    std::mt19937_64 rng(seed);
    NodeId directional = g.scalar(0.0);
    std::vector<Tensor> dirs;
    for (std::size_t p = 0; p < rg.params.size(); ++p) {
      const auto& node = g.node(rg.params[p]);
      dirs.push_back(seeded(rng, node.rows, node.cols));
      directional = g.add(directional, g.sum_all(g.mul(grads[p], g.constant(dirs.back()))));
    }
    const auto hvp = lbt::ad::evaluate(g, rg.bindings, g.gradients(directional, rg.params));

    const double h = 1e-5;
    auto shifted = [&](double s) {
      Bindings b = rg.bindings;
      for (std::size_t p = 0; p < rg.params.size(); ++p) {
        const auto& name = g.node(rg.params[p]).name;
        Tensor t = *rg.bindings.find(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += s * dirs[p][i];
        b.rebind(name, t);
      }
      return lbt::ad::evaluate(g, b, grads);
    };
    const auto plus = shifted(h), minus = shifted(-h);
    for (std::size_t p = 0; p < rg.params.size(); ++p) {
      for (std::size_t i = 0; i < hvp[p].size(); ++i) {
        const double ref = (plus[p][i] - minus[p][i]) / (2 * h);
        EXPECT_NEAR(hvp[p][i], ref, 1e-6 * std::max(1.0, std::abs(ref))) << "seed " << seed;
      }
    }
  }
}

TEST(SoftCrossEntropy, OneHotMatchIsZero) {
  const Tensor t = Tensor::row({0.0, 1.0, 0.0});
  EXPECT_LT(std::abs(lbt::ad::soft_cross_entropy(t, t)), 1e-9);
}

TEST(SoftCrossEntropy, UniformOverFourIsLogFour) {
  const Tensor u(1, 4, 0.25);
  EXPECT_NEAR(lbt::ad::soft_cross_entropy(u, u), std::log(4.0), 1e-12);
  EXPECT_NEAR(lbt::ad::soft_cross_entropy(u, u), 1.386294, 1e-6);
}

TEST(SoftCrossEntropy, SoftTargetDirectFormula) {
  const double expected = -0.7 * std::log(0.5) - 0.3 * std::log(0.5);
  EXPECT_NEAR(lbt::ad::soft_cross_entropy(Tensor::row({0.5, 0.5}), Tensor::row({0.7, 0.3})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.693147, 1e-6);
}

TEST(SoftCrossEntropy, BatchIsMeanOverRowsAndMatchesGraph) {
  const Tensor pred = Tensor::from_rows({{0.2, 0.8}, {0.6, 0.4}});
  const Tensor target = Tensor::from_rows({{1.0, 0.0}, {0.25, 0.75}});
  const double expected = 0.5 * (-std::log(0.2) - 0.25 * std::log(0.6) - 0.75 * std::log(0.4));
  EXPECT_NEAR(lbt::ad::soft_cross_entropy(pred, target), expected, 1e-15);
  Graph g;
  const NodeId loss = g.soft_cross_entropy(g.constant(pred), g.constant(target));
  EXPECT_NEAR(lbt::ad::evaluate(g, Bindings{}, loss).item(), expected, 1e-15);
}

TEST(SoftCrossEntropy, RejectsMismatchAndNonDistributions) {
  EXPECT_THROW(lbt::ad::soft_cross_entropy(Tensor(1, 2, 0.5), Tensor(1, 3, 1.0 / 3)), lbt::ShapeError);
  EXPECT_THROW(lbt::ad::soft_cross_entropy(Tensor(1, 2, 0.5), Tensor::row({0.5, 0.6})), lbt::Error);
  EXPECT_THROW(lbt::ad::soft_cross_entropy(Tensor(1, 2, 0.5), Tensor::row({1.5, -0.5})), lbt::Error);
  EXPECT_EQ(lbt::ad::soft_cross_entropy(Tensor(0, 3), Tensor(0, 3)), 0.0);
}
