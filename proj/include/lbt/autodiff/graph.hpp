// SPDX-License-Identifier: Apache-2.0
//
// Static computation graphs with symbolic reverse-mode differentiation.
//
// A Graph is an append-only list of primitive nodes; a node's inputs always
// precede it, so index order is a topological order. gradients() appends the
// adjoint computation as ordinary nodes, which means gradient nodes can be
// differentiated again. Values are produced by evaluate() against a set of
// Bindings; the graph itself holds no evaluation state and may be evaluated
// concurrently from several threads.
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lbt/autodiff/tensor.hpp"

namespace lbt::ad {

struct NodeId {
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return index != std::numeric_limits<std::uint32_t>::max(); }
  auto operator<=>(const NodeId&) const = default;
};

/// Marker for a batch dimension whose extent is only known at evaluation.
inline constexpr std::size_t kDynamic = std::numeric_limits<std::size_t>::max();

/// Row/column guard used by the guarded log and reciprocal primitives.
inline constexpr double kLogGuard = 1e-12;

enum class OpKind : std::uint8_t {
  kInput,
  kParameter,
  kConstant,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddRow,     // [n,m] + [1,m]
  kAddCol,     // [n,m] + [n,1]
  kScaleBy,    // [1,1] * [n,m]
  kAffine,     // a*x + b with constant a, b
  kTanh,
  kRelu,
  kStep,       // 1{x > 0}, zero derivative
  kSoftmax,    // row-wise
  kLogGuarded, // log(max(x, kLogGuard))
  kRecipGuarded,
  kSumAll,
  kBroadcast,  // fill shape of ref with a scalar
  kBatchMean,  // sum(x) / rows(x), 0 for an empty batch
  kBatchMeanBroadcast,
  kSumRows,    // [n,m] -> [1,m]
  kSumCols,    // [n,m] -> [n,1]
  kZerosLike,
  kElement,    // x(r,c) as [1,1]
  kEmbed,      // zeros shaped like ref with s at (r,c)
  kStopGradient,
};

std::string_view op_name(OpKind kind);

struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<NodeId> inputs;
  std::size_t rows = 0;  // static shape; rows may be kDynamic
  std::size_t cols = 0;
  double a = 0.0;  // affine scale
  double b = 0.0;  // affine shift
  std::size_t r = 0;
  std::size_t c = 0;
  std::string name;                        // placeholders only
  std::shared_ptr<const Tensor> constant;  // constants only
};

class Graph {
 public:
  /// Batch input: rows bound at evaluation, columns fixed.
  NodeId input(std::string name, std::size_t cols);
  /// Fully shaped placeholder. Parameters are what gradients are taken against.
  NodeId parameter(std::string name, std::size_t rows, std::size_t cols);
  NodeId constant(Tensor value);
  NodeId scalar(double v) { return constant(Tensor::scalar(v)); }

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId add_row(NodeId a, NodeId row);
  NodeId add_col(NodeId a, NodeId col);
  NodeId scale_by(NodeId x, NodeId s);
  NodeId affine(NodeId x, double scale, double shift);
  NodeId scale(NodeId x, double s) { return affine(x, s, 0.0); }
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  NodeId step(NodeId x);
  NodeId softmax(NodeId x);
  NodeId log_guarded(NodeId x);
  NodeId recip_guarded(NodeId x);
  NodeId sum_all(NodeId x);
  NodeId broadcast(NodeId s, NodeId like);
  NodeId batch_mean(NodeId x);
  NodeId batch_mean_broadcast(NodeId s, NodeId like);
  NodeId sum_rows(NodeId x);
  NodeId sum_cols(NodeId x);
  NodeId zeros_like(NodeId x);
  NodeId element(NodeId x, std::size_t r, std::size_t c);
  NodeId embed(NodeId s, NodeId like, std::size_t r, std::size_t c);
  NodeId stop_gradient(NodeId x);

  /// Mean over rows of -sum_k target_k * log(max(pred_k, kLogGuard)).
  NodeId soft_cross_entropy(NodeId probabilities, NodeId targets);

  /// Appends the adjoint graph of a scalar `loss` and returns one gradient
  /// node per entry of `wrt`, shaped like that entry. Entries the loss does
  /// not depend on get a zeros node.
  std::vector<NodeId> gradients(NodeId loss, std::span<const NodeId> wrt);
  NodeId gradient(NodeId loss, NodeId wrt);

  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  NodeId find(std::string_view name) const;
  /// Placeholders of kind kParameter, in registration order.
  std::vector<NodeId> parameters() const;
  std::vector<NodeId> inputs() const;

 private:
  NodeId push(Node node);
  void check(NodeId id) const;
  std::size_t rows_of(NodeId id) const { return nodes_[id.index].rows; }
  std::size_t cols_of(NodeId id) const { return nodes_[id.index].cols; }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> names_;
};

/// Name -> value table for one evaluation. A name may be bound only once.
class Bindings {
 public:
  Bindings() = default;
  Bindings& bind(std::string name, Tensor value);
  /// Replaces an existing binding (or adds one).
  Bindings& rebind(const std::string& name, Tensor value);
  const Tensor* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

 private:
  std::map<std::string, Tensor, std::less<>> values_;
};

/// Evaluates the requested nodes. Throws BindingError for missing or
/// mis-shaped placeholders, ShapeError for runtime shape conflicts and
/// NonFiniteError as soon as any computed value is NaN or infinite.
std::vector<Tensor> evaluate(const Graph& graph, const Bindings& bindings,
                             std::span<const NodeId> outputs);
Tensor evaluate(const Graph& graph, const Bindings& bindings, NodeId output);

/// Evaluates `output` with the graph's single kInput placeholder bound to
/// `input` and every other placeholder taken from `params`.
Tensor forward(const Graph& graph, const Bindings& params, const Tensor& input, NodeId output);

/// d(loss)/d(param) for the named parameters, concatenated in the graph's
/// registration order. The graph is copied; the caller's graph is untouched.
std::vector<double> gradient(const Graph& graph, NodeId loss, std::span<const std::string> wrt,
                             const Bindings& bindings);

}  // namespace lbt::ad
