// SPDX-License-Identifier: Apache-2.0
#include "lbt/autodiff/graph.hpp"

#include <algorithm>

#include "lbt/error.hpp"

namespace lbt::ad {

namespace {

std::size_t merge_dim(std::size_t a, std::size_t b, OpKind kind) {
  if (a == kDynamic) return b;
  if (b == kDynamic || a == b) return a;
  throw ShapeError(std::string(op_name(kind)) + ": incompatible dimensions " + std::to_string(a) +
                   " and " + std::to_string(b));
}

std::string dims(const Node& n) {
  const auto d = [](std::size_t v) { return v == kDynamic ? std::string("?") : std::to_string(v); };
  return "[" + d(n.rows) + "x" + d(n.cols) + "]";
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kAddCol: return "add_col";
    case OpKind::kScaleBy: return "scale_by";
    case OpKind::kAffine: return "affine";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kStep: return "step";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogGuarded: return "log_guarded";
    case OpKind::kRecipGuarded: return "recip_guarded";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kBatchMean: return "batch_mean";
    case OpKind::kBatchMeanBroadcast: return "batch_mean_broadcast";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kSumCols: return "sum_cols";
    case OpKind::kZerosLike: return "zeros_like";
    case OpKind::kElement: return "element";
    case OpKind::kEmbed: return "embed";
    case OpKind::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

const Node& Graph::node(NodeId id) const {
  check(id);
  return nodes_[id.index];
}

void Graph::check(NodeId id) const {
  if (!id.valid() || id.index >= nodes_.size()) {
    throw Error("node id " + std::to_string(id.index) + " does not belong to this graph");
  }
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) check(in);
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::input(std::string name, std::size_t cols) {
  if (names_.contains(name)) throw BindingError("placeholder '" + name + "' declared twice");
  Node n{.kind = OpKind::kInput, .rows = kDynamic, .cols = cols, .name = name};
  const NodeId id = push(std::move(n));
  names_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::parameter(std::string name, std::size_t rows, std::size_t cols) {
  if (names_.contains(name)) throw BindingError("placeholder '" + name + "' declared twice");
  Node n{.kind = OpKind::kParameter, .rows = rows, .cols = cols, .name = name};
  const NodeId id = push(std::move(n));
  names_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n{.kind = OpKind::kConstant, .rows = value.rows(), .cols = value.cols()};
  n.constant = std::make_shared<const Tensor>(std::move(value));
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check(a), check(b);
  merge_dim(cols_of(a), rows_of(b), OpKind::kMatMul);
  return push({.kind = OpKind::kMatMul, .inputs = {a, b}, .rows = rows_of(a), .cols = cols_of(b)});
}

NodeId Graph::transpose(NodeId a) {
  check(a);
  return push({.kind = OpKind::kTranspose, .inputs = {a}, .rows = cols_of(a), .cols = rows_of(a)});
}

NodeId Graph::add(NodeId a, NodeId b) {
  check(a), check(b);
  return push({.kind = OpKind::kAdd,
               .inputs = {a, b},
               .rows = merge_dim(rows_of(a), rows_of(b), OpKind::kAdd),
               .cols = merge_dim(cols_of(a), cols_of(b), OpKind::kAdd)});
}

NodeId Graph::sub(NodeId a, NodeId b) {
  check(a), check(b);
  return push({.kind = OpKind::kSub,
               .inputs = {a, b},
               .rows = merge_dim(rows_of(a), rows_of(b), OpKind::kSub),
               .cols = merge_dim(cols_of(a), cols_of(b), OpKind::kSub)});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check(a), check(b);
  return push({.kind = OpKind::kMul,
               .inputs = {a, b},
               .rows = merge_dim(rows_of(a), rows_of(b), OpKind::kMul),
               .cols = merge_dim(cols_of(a), cols_of(b), OpKind::kMul)});
}

NodeId Graph::add_row(NodeId a, NodeId row) {
  check(a), check(row);
  merge_dim(rows_of(row), 1, OpKind::kAddRow);
  return push({.kind = OpKind::kAddRow,
               .inputs = {a, row},
               .rows = rows_of(a),
               .cols = merge_dim(cols_of(a), cols_of(row), OpKind::kAddRow)});
}

NodeId Graph::add_col(NodeId a, NodeId col) {
  check(a), check(col);
  merge_dim(cols_of(col), 1, OpKind::kAddCol);
  return push({.kind = OpKind::kAddCol,
               .inputs = {a, col},
               .rows = merge_dim(rows_of(a), rows_of(col), OpKind::kAddCol),
               .cols = cols_of(a)});
}

NodeId Graph::scale_by(NodeId x, NodeId s) {
  check(x), check(s);
  merge_dim(rows_of(s), 1, OpKind::kScaleBy);
  merge_dim(cols_of(s), 1, OpKind::kScaleBy);
  return push({.kind = OpKind::kScaleBy, .inputs = {x, s}, .rows = rows_of(x), .cols = cols_of(x)});
}

NodeId Graph::affine(NodeId x, double scale, double shift) {
  check(x);
  return push({.kind = OpKind::kAffine,
               .inputs = {x},
               .rows = rows_of(x),
               .cols = cols_of(x),
               .a = scale,
               .b = shift});
}

#define LBT_UNARY(fn, kind_)                                                                 \
  NodeId Graph::fn(NodeId x) {                                                               \
    check(x);                                                                                \
    return push({.kind = OpKind::kind_, .inputs = {x}, .rows = rows_of(x), .cols = cols_of(x)}); \
  }

LBT_UNARY(tanh, kTanh)
LBT_UNARY(relu, kRelu)
LBT_UNARY(step, kStep)
LBT_UNARY(softmax, kSoftmax)
LBT_UNARY(log_guarded, kLogGuarded)
LBT_UNARY(recip_guarded, kRecipGuarded)
LBT_UNARY(zeros_like, kZerosLike)
LBT_UNARY(stop_gradient, kStopGradient)

#undef LBT_UNARY

NodeId Graph::sum_all(NodeId x) {
  check(x);
  return push({.kind = OpKind::kSumAll, .inputs = {x}, .rows = 1, .cols = 1});
}

NodeId Graph::broadcast(NodeId s, NodeId like) {
  check(s), check(like);
  merge_dim(rows_of(s), 1, OpKind::kBroadcast);
  merge_dim(cols_of(s), 1, OpKind::kBroadcast);
  return push({.kind = OpKind::kBroadcast, .inputs = {s, like}, .rows = rows_of(like), .cols = cols_of(like)});
}

NodeId Graph::batch_mean(NodeId x) {
  check(x);
  return push({.kind = OpKind::kBatchMean, .inputs = {x}, .rows = 1, .cols = 1});
}

NodeId Graph::batch_mean_broadcast(NodeId s, NodeId like) {
  check(s), check(like);
  merge_dim(rows_of(s), 1, OpKind::kBatchMeanBroadcast);
  merge_dim(cols_of(s), 1, OpKind::kBatchMeanBroadcast);
  return push({.kind = OpKind::kBatchMeanBroadcast,
               .inputs = {s, like},
               .rows = rows_of(like),
               .cols = cols_of(like)});
}

NodeId Graph::sum_rows(NodeId x) {
  check(x);
  return push({.kind = OpKind::kSumRows, .inputs = {x}, .rows = 1, .cols = cols_of(x)});
}

NodeId Graph::sum_cols(NodeId x) {
  check(x);
  return push({.kind = OpKind::kSumCols, .inputs = {x}, .rows = rows_of(x), .cols = 1});
}

NodeId Graph::element(NodeId x, std::size_t r, std::size_t c) {
  check(x);
  if ((rows_of(x) != kDynamic && r >= rows_of(x)) || c >= cols_of(x)) {
    throw ShapeError("element(" + std::to_string(r) + "," + std::to_string(c) + ") out of range for " +
                     dims(nodes_[x.index]));
  }
  return push({.kind = OpKind::kElement, .inputs = {x}, .rows = 1, .cols = 1, .r = r, .c = c});
}

NodeId Graph::embed(NodeId s, NodeId like, std::size_t r, std::size_t c) {
  check(s), check(like);
  merge_dim(rows_of(s), 1, OpKind::kEmbed);
  merge_dim(cols_of(s), 1, OpKind::kEmbed);
  return push({.kind = OpKind::kEmbed,
               .inputs = {s, like},
               .rows = rows_of(like),
               .cols = cols_of(like),
               .r = r,
               .c = c});
}

NodeId Graph::soft_cross_entropy(NodeId probabilities, NodeId targets) {
  check(probabilities), check(targets);
  merge_dim(cols_of(probabilities), cols_of(targets), OpKind::kMul);
  const NodeId per_row = sum_cols(mul(targets, log_guarded(probabilities)));
  return scale(batch_mean(per_row), -1.0);
}

NodeId Graph::find(std::string_view name) const {
  const auto it = names_.find(name);
  return it == names_.end() ? NodeId{} : it->second;
}

std::vector<NodeId> Graph::parameters() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kParameter) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

std::vector<NodeId> Graph::inputs() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kInput) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symbolic reverse mode
// ---------------------------------------------------------------------------

namespace {

// Inputs through which a gradient flows. Shape references and
// piecewise-constant ops carry none.
bool differentiable_input(OpKind kind, std::size_t slot) {
  switch (kind) {
    case OpKind::kStep:
    case OpKind::kZerosLike:
    case OpKind::kStopGradient:
      return false;
    case OpKind::kBroadcast:
    case OpKind::kBatchMeanBroadcast:
    case OpKind::kEmbed:
      return slot == 0;
    default:
      return true;
  }
}

}  // namespace

NodeId Graph::gradient(NodeId loss, NodeId wrt) {
  const NodeId one[] = {wrt};
  return gradients(loss, one).front();
}

std::vector<NodeId> Graph::gradients(NodeId loss, std::span<const NodeId> wrt) {
  check(loss);
  if (rows_of(loss) != 1 || cols_of(loss) != 1) {
    throw ShapeError("gradient requested of non-scalar node of shape " + dims(nodes_[loss.index]));
  }
  for (NodeId w : wrt) check(w);

  const std::size_t end = loss.index + 1;
  std::vector<char> reaches(end, 0);
  for (NodeId w : wrt) {
    if (w.index < end) reaches[w.index] = 1;
  }
  for (std::size_t i = 0; i < end; ++i) {
    if (reaches[i]) continue;
    const Node& n = nodes_[i];
    for (std::size_t s = 0; s < n.inputs.size(); ++s) {
      if (differentiable_input(n.kind, s) && reaches[n.inputs[s].index]) {
        reaches[i] = 1;
        break;
      }
    }
  }

  std::vector<NodeId> adjoint(end);
  auto accumulate = [&](NodeId target, NodeId contribution) {
    NodeId& slot = adjoint[target.index];
    slot = slot.valid() ? add(slot, contribution) : contribution;
  };

  if (reaches[loss.index]) adjoint[loss.index] = scalar(1.0);

  for (std::size_t i = end; i-- > 0;) {
    if (!reaches[i] || !adjoint[i].valid()) continue;
    // Copy: pushing new nodes may reallocate nodes_.
    const Node n = nodes_[i];
    const NodeId g = adjoint[i];
    const NodeId y{static_cast<std::uint32_t>(i)};
    auto wants = [&](std::size_t slot) {
      return differentiable_input(n.kind, slot) && reaches[n.inputs[slot].index];
    };
    const NodeId x0 = n.inputs.empty() ? NodeId{} : n.inputs[0];
    const NodeId x1 = n.inputs.size() > 1 ? n.inputs[1] : NodeId{};

    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kParameter:
      case OpKind::kConstant:
      case OpKind::kStep:
      case OpKind::kZerosLike:
      case OpKind::kStopGradient:
        break;
      case OpKind::kMatMul:
        if (wants(0)) accumulate(x0, matmul(g, transpose(x1)));
        if (wants(1)) accumulate(x1, matmul(transpose(x0), g));
        break;
      case OpKind::kTranspose:
        if (wants(0)) accumulate(x0, transpose(g));
        break;
      case OpKind::kAdd:
        if (wants(0)) accumulate(x0, g);
        if (wants(1)) accumulate(x1, g);
        break;
      case OpKind::kSub:
        if (wants(0)) accumulate(x0, g);
        if (wants(1)) accumulate(x1, scale(g, -1.0));
        break;
      case OpKind::kMul:
        if (wants(0)) accumulate(x0, mul(g, x1));
        if (wants(1)) accumulate(x1, mul(g, x0));
        break;
      case OpKind::kAddRow:
        if (wants(0)) accumulate(x0, g);
        if (wants(1)) accumulate(x1, sum_rows(g));
        break;
      case OpKind::kAddCol:
        if (wants(0)) accumulate(x0, g);
        if (wants(1)) accumulate(x1, sum_cols(g));
        break;
      case OpKind::kScaleBy:
        if (wants(0)) accumulate(x0, scale_by(g, x1));
        if (wants(1)) accumulate(x1, sum_all(mul(g, x0)));
        break;
      case OpKind::kAffine:
        if (wants(0)) accumulate(x0, scale(g, n.a));
        break;
      case OpKind::kTanh:
        accumulate(x0, mul(g, affine(mul(y, y), -1.0, 1.0)));
        break;
      case OpKind::kRelu:
        accumulate(x0, mul(g, step(x0)));
        break;
      case OpKind::kSoftmax: {
        const NodeId centred = add_col(g, scale(sum_cols(mul(g, y)), -1.0));
        accumulate(x0, mul(y, centred));
        break;
      }
      case OpKind::kLogGuarded:
        accumulate(x0, mul(g, recip_guarded(x0)));
        break;
      case OpKind::kRecipGuarded:
        accumulate(x0, mul(g, scale(mul(y, y), -1.0)));
        break;
      case OpKind::kSumAll:
        accumulate(x0, broadcast(g, x0));
        break;
      case OpKind::kBroadcast:
        accumulate(x0, sum_all(g));
        break;
      case OpKind::kBatchMean:
        accumulate(x0, batch_mean_broadcast(g, x0));
        break;
      case OpKind::kBatchMeanBroadcast:
        accumulate(x0, batch_mean(g));
        break;
      case OpKind::kSumRows:
        accumulate(x0, add_row(zeros_like(x0), g));
        break;
      case OpKind::kSumCols:
        accumulate(x0, add_col(zeros_like(x0), g));
        break;
      case OpKind::kElement:
        accumulate(x0, embed(g, x0, n.r, n.c));
        break;
      case OpKind::kEmbed:
        accumulate(x0, element(g, n.r, n.c));
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w.index < end && adjoint[w.index].valid()) {
      out.push_back(adjoint[w.index]);
    } else {
      out.push_back(zeros_like(w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bindings
// ---------------------------------------------------------------------------

Bindings& Bindings::bind(std::string name, Tensor value) {
  if (values_.contains(name)) throw BindingError("'" + name + "' bound twice");
  values_.emplace(std::move(name), std::move(value));
  return *this;
}

Bindings& Bindings::rebind(const std::string& name, Tensor value) {
  values_.insert_or_assign(name, std::move(value));
  return *this;
}

const Tensor* Bindings::find(std::string_view name) const {
  const auto it = values_.find(name);
  return it == values_.end() ? nullptr : &it->second;
}

}  // namespace lbt::ad
