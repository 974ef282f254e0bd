// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <optional>

#include "lbt/autodiff/graph.hpp"
#include "lbt/error.hpp"

namespace lbt::ad {

namespace {

[[noreturn]] void shape_fail(const Node& n, const std::string& what) {
  throw ShapeError(std::string(op_name(n.kind)) + ": " + what);
}

void require_same(const Node& n, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail(n, "operands " + a.shape_string() + " and " + b.shape_string());
}

Tensor matmul(const Node& n, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_fail(n, a.shape_string() + " x " + b.shape_string());
  Tensor out(a.rows(), b.cols());
  const std::size_t k_max = a.cols();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = &out(i, 0);
    for (std::size_t k = 0; k < k_max; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.values().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

template <typename F>
Tensor map(const Tensor& x, F&& f) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename F>
Tensor zip(const Node& n, const Tensor& a, const Tensor& b, F&& f) {
  require_same(n, a, b);
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

Tensor check_placeholder(const Node& n, const Bindings& bindings) {
  const Tensor* bound = bindings.find(n.name);
  if (bound == nullptr) throw BindingError("unbound placeholder '" + n.name + "'");
  const bool rows_ok = n.rows == kDynamic || bound->rows() == n.rows;
  if (!rows_ok || bound->cols() != n.cols) {
    const std::string declared =
        "[" + (n.rows == kDynamic ? std::string("?") : std::to_string(n.rows)) + "x" + std::to_string(n.cols) + "]";
    throw BindingError("placeholder '" + n.name + "' declared " + declared + " but bound to " +
                       bound->shape_string());
  }
  return *bound;
}

Tensor compute(const Node& n, const std::vector<std::optional<Tensor>>& values, const Bindings& bindings) {
  auto in = [&](std::size_t slot) -> const Tensor& { return *values[n.inputs[slot].index]; };
  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
      return check_placeholder(n, bindings);
    case OpKind::kConstant:
      return *n.constant;
    case OpKind::kMatMul:
      return matmul(n, in(0), in(1));
    case OpKind::kTranspose: {
      const Tensor& x = in(0);
      Tensor out(x.cols(), x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
      return out;
    }
    case OpKind::kAdd:
      return zip(n, in(0), in(1), [](double a, double b) { return a + b; });
    case OpKind::kSub:
      return zip(n, in(0), in(1), [](double a, double b) { return a - b; });
    case OpKind::kMul:
      return zip(n, in(0), in(1), [](double a, double b) { return a * b; });
    case OpKind::kAddRow: {
      const Tensor& x = in(0);
      const Tensor& r = in(1);
      if (r.rows() != 1 || r.cols() != x.cols()) shape_fail(n, x.shape_string() + " + row " + r.shape_string());
      Tensor out = x;
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += r(0, j);
      return out;
    }
    case OpKind::kAddCol: {
      const Tensor& x = in(0);
      const Tensor& c = in(1);
      if (c.cols() != 1 || c.rows() != x.rows()) shape_fail(n, x.shape_string() + " + col " + c.shape_string());
      Tensor out = x;
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += c(i, 0);
      return out;
    }
    case OpKind::kScaleBy: {
      const double s = in(1).item();
      return map(in(0), [s](double v) { return s * v; });
    }
    case OpKind::kAffine:
      return map(in(0), [&n](double v) { return n.a * v + n.b; });
    case OpKind::kTanh:
      return map(in(0), [](double v) { return std::tanh(v); });
    case OpKind::kRelu:
      return map(in(0), [](double v) { return v > 0.0 ? v : 0.0; });
    case OpKind::kStep:
      return map(in(0), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case OpKind::kSoftmax:
      return softmax_rows(in(0));
    case OpKind::kLogGuarded:
      return map(in(0), [](double v) { return std::log(std::max(v, kLogGuard)); });
    case OpKind::kRecipGuarded:
      return map(in(0), [](double v) { return v > kLogGuard ? 1.0 / v : 0.0; });
    case OpKind::kSumAll:
      return Tensor::scalar(sum(in(0)));
    case OpKind::kBroadcast: {
      const Tensor& like = in(1);
      return Tensor(like.rows(), like.cols(), in(0).item());
    }
    case OpKind::kBatchMean: {
      const Tensor& x = in(0);
      return Tensor::scalar(x.rows() == 0 ? 0.0 : sum(x) / static_cast<double>(x.rows()));
    }
    case OpKind::kBatchMeanBroadcast: {
      const Tensor& like = in(1);
      const double v = like.rows() == 0 ? 0.0 : in(0).item() / static_cast<double>(like.rows());
      return Tensor(like.rows(), like.cols(), v);
    }
    case OpKind::kSumRows: {
      const Tensor& x = in(0);
      Tensor out(1, x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
      return out;
    }
    case OpKind::kSumCols: {
      const Tensor& x = in(0);
      Tensor out(x.rows(), 1);
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, 0) += x(i, j);
      return out;
    }
    case OpKind::kZerosLike:
      return Tensor(in(0).rows(), in(0).cols());
    case OpKind::kElement: {
      const Tensor& x = in(0);
      if (n.r >= x.rows() || n.c >= x.cols()) shape_fail(n, "index out of range for " + x.shape_string());
      return Tensor::scalar(x(n.r, n.c));
    }
    case OpKind::kEmbed: {
      const Tensor& like = in(1);
      if (n.r >= like.rows() || n.c >= like.cols()) shape_fail(n, "index out of range for " + like.shape_string());
      Tensor out(like.rows(), like.cols());
      out(n.r, n.c) = in(0).item();
      return out;
    }
    case OpKind::kStopGradient:
      return in(0);
  }
  throw Error("unhandled op kind");
}

}  // namespace

std::vector<Tensor> evaluate(const Graph& graph, const Bindings& bindings, std::span<const NodeId> outputs) {
  std::size_t end = 0;
  for (NodeId id : outputs) {
    graph.node(id);
    end = std::max<std::size_t>(end, id.index + 1);
  }
  std::vector<char> needed(end, 0);
  for (NodeId id : outputs) needed[id.index] = 1;
  for (std::size_t i = end; i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId in : graph.node(NodeId{static_cast<std::uint32_t>(i)}).inputs) needed[in.index] = 1;
  }

  // Remaining uses per node, so intermediates can be released early.
  std::vector<std::uint32_t> uses(end, 0);
  for (std::size_t i = 0; i < end; ++i) {
    if (!needed[i]) continue;
    for (NodeId in : graph.node(NodeId{static_cast<std::uint32_t>(i)}).inputs) ++uses[in.index];
  }
  std::vector<char> is_output(end, 0);
  for (NodeId id : outputs) is_output[id.index] = 1;

  std::vector<std::optional<Tensor>> values(end);
  for (std::size_t i = 0; i < end; ++i) {
    if (!needed[i]) continue;
    const Node& n = graph.node(NodeId{static_cast<std::uint32_t>(i)});
    Tensor v = compute(n, values, bindings);
    if (!v.all_finite()) {
      throw NonFiniteError("non-finite value produced by node " + std::to_string(i) + " (" +
                           std::string(op_name(n.kind)) + (n.name.empty() ? "" : " '" + n.name + "'") + ")");
    }
    values[i] = std::move(v);
    for (NodeId in : n.inputs) {
      if (--uses[in.index] == 0 && !is_output[in.index]) values[in.index].reset();
    }
  }

  std::vector<Tensor> out;
  out.reserve(outputs.size());
  for (NodeId id : outputs) out.push_back(*values[id.index]);
  return out;
}

Tensor evaluate(const Graph& graph, const Bindings& bindings, NodeId output) {
  const NodeId outs[] = {output};
  return std::move(evaluate(graph, bindings, outs).front());
}

Tensor forward(const Graph& graph, const Bindings& params, const Tensor& input, NodeId output) {
  const auto inputs = graph.inputs();
  if (inputs.size() != 1) {
    throw BindingError("forward() needs a graph with exactly one input, found " + std::to_string(inputs.size()));
  }
  const Node& in = graph.node(inputs.front());
  if (input.cols() != in.cols) {
    throw ShapeError("input '" + in.name + "' expects " + std::to_string(in.cols) + " columns, got " +
                     input.shape_string());
  }
  Bindings all = params;
  all.bind(in.name, input);
  return evaluate(graph, all, output);
}

std::vector<double> gradient(const Graph& graph, NodeId loss, std::span<const std::string> wrt,
                             const Bindings& bindings) {
  Graph g = graph;
  std::vector<NodeId> targets;
  for (NodeId p : g.parameters()) {
    if (std::find(wrt.begin(), wrt.end(), g.node(p).name) != wrt.end()) targets.push_back(p);
  }
  for (const std::string& name : wrt) {
    const NodeId id = g.find(name);
    if (!id.valid() || g.node(id).kind != OpKind::kParameter) {
      throw BindingError("unknown parameter '" + name + "'");
    }
  }
  const auto grads = g.gradients(loss, targets);
  const auto values = evaluate(g, bindings, grads);
  std::vector<double> flat;
  for (const Tensor& t : values) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

}  // namespace lbt::ad
