// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctseq/autodiff/tensor.hpp"

namespace ctseq::ad {

class ParameterStore;

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

struct ParamId {
  std::uint32_t index = 0;
  friend auto operator<=>(ParamId, ParamId) = default;
};

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  concat,
  slice,
  tanh,
  sigmoid,
  softplus,
  exp,
  log,
  square,
  relu,
  sum,
  mean,
  broadcast,
  scale,
  lincomb,
  log_softmax,
};

std::string_view op_name(Op op);

/// Per-op attributes. Only the fields an op reads are meaningful.
struct OpAttr {
  int axis = -1;              // concat, slice, sum, mean (-1: reduce all)
  std::size_t begin = 0;      // slice
  std::size_t extent = 0;     // slice
  double scalar = 1.0;        // scale
  std::vector<double> coeffs; // lincomb
  Shape target;               // broadcast
};

using Gradients = std::map<ParamId, Tensor>;

/// Append-only tape of tensor operations. Inputs always precede the node
/// that consumes them, so the graph is acyclic and a reverse sweep over node
/// ids is a valid topological order for backpropagation.
class Graph {
 public:
  explicit Graph(const ParameterStore* store = nullptr) : store_(store) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId constant(Tensor value);
  /// Trainable leaf. Asking twice for the same id returns the same node, so
  /// gradients from every use accumulate into one entry.
  NodeId parameter(ParamId id, const Tensor& value);
  /// Trainable leaf backed by the attached ParameterStore.
  NodeId param(ParamId id);

  NodeId forward(Op op, std::span<const NodeId> inputs, const OpAttr& attr = {});

  const Tensor& value(NodeId id) const { return nodes_[id.index].value; }
  Op op(NodeId id) const { return nodes_[id.index].op; }
  bool requires_grad(NodeId id) const { return nodes_[id.index].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar loss. Returns the gradient for every
  /// trainable leaf reachable from the loss; unreachable parameters get zeros.
  Gradients backward(NodeId loss) const;

  void set_strict(bool strict) { strict_ = strict; }
  bool strict() const { return strict_; }

  /// Tests flip this on to have every graph check each op for NaN/Inf.
  static void set_default_strict(bool strict);

  const ParameterStore* store() const { return store_; }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    OpAttr attr;
    bool requires_grad = false;
    bool is_param = false;
    ParamId param{};
  };

  NodeId push(Node node);
  void backprop_node(const Node& node, const Tensor& grad,
                     std::vector<Tensor>& grads,
                     std::vector<std::uint8_t>& has_grad) const;

  const ParameterStore* store_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint32_t, NodeId> param_nodes_;
  bool strict_ = default_strict_;
  static inline bool default_strict_ = false;
};

/// Lightweight handle pairing a node id with its graph, so model code can
/// be written as ordinary expressions.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  const Tensor& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  NodeId id_{};
};

Var constant(Graph& g, Tensor value);
Var param(Graph& g, ParamId id);

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(double c, Var a);
Var operator-(Var a);
Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(Var a, int axis, std::size_t begin, std::size_t extent);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var relu(Var a);
Var sum(Var a, int axis = -1);
Var mean(Var a, int axis = -1);
Var broadcast(Var a, Shape target);
Var scale(Var a, double c);
/// sum_i coeffs[i] * terms[i]; all terms share one shape.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);
Var log_softmax(Var a);

}  // namespace ctseq::ad
