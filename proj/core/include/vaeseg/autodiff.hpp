#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vaeseg/tensor.hpp"

namespace vaeseg {

using NodeId = std::size_t;

class Graph;

/// What a node's backward rule sees: the forward values of its inputs and
/// output, the incoming gradient, and one pre-zeroed accumulator per input
/// (nullptr when that input does not require a gradient).
struct BackwardContext {
  const Graph& graph;
  std::span<const NodeId> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  std::span<Tensor* const> input_grads;

  const Tensor& input(std::size_t i) const;
  bool needs(std::size_t i) const { return input_grads[i] != nullptr; }
  Tensor& grad(std::size_t i) const { return *input_grads[i]; }
};

using BackwardFn = std::function<void(const BackwardContext&)>;
using GradientMap = std::map<NodeId, Tensor>;

/// Define-by-run computation graph.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A graph supports a single backward pass; calling backward() a second time
/// throws std::logic_error. Build a fresh graph for every forward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId leaf(Tensor value, bool requires_grad);
  NodeId leaf(Shape shape, std::vector<float> data, bool requires_grad);

  /// Appends an op node; requires_grad is inherited from the inputs.
  NodeId record(std::string op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return node(id).value; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  bool is_leaf(NodeId id) const { return node(id).is_leaf; }
  const std::string& op(NodeId id) const { return node(id).op; }
  std::span<const NodeId> inputs(NodeId id) const { return node(id).inputs; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Scalar reductions keep their f64 accumulator alongside the f32 value.
  void set_scalar_f64(NodeId id, double v);
  /// The f64 accumulator if one was recorded, else the f32 value.
  double scalar_f64(NodeId id) const;

  /// Opt-in f64 shadow for whole tensors, used by finite-difference checks.
  /// Ops that support it only fill the shadow while tracking is on.
  void set_track_f64(bool on) { track_f64_ = on; }
  bool track_f64() const { return track_f64_; }
  void set_f64(NodeId id, std::vector<double> values);
  /// nullptr when the node has no shadow.
  const std::vector<double>* f64(NodeId id) const;
  /// The shadow if present, else the f32 values widened.
  std::vector<double> wide(NodeId id) const;

  /// Reverse-mode sweep from a scalar node. Returns one gradient per
  /// requires_grad leaf (zeros for leaves the loss does not depend on).
  GradientMap backward(NodeId loss);

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    std::shared_ptr<const std::vector<double>> f64;
    BackwardFn backward;
  };

  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
  bool track_f64_ = false;
};

/// Lightweight handle to a node in a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph& graph, NodeId id) : graph_(&graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  const Tensor& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph_->requires_grad(id_); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

inline Var make_leaf(Graph& graph, Tensor value, bool requires_grad) {
  return {graph, graph.leaf(std::move(value), requires_grad)};
}

}  // namespace vaeseg
