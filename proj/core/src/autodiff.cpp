#include "vaeseg/autodiff.hpp"

#include <optional>
#include <stdexcept>

namespace vaeseg {

const Tensor& BackwardContext::input(std::size_t i) const { return graph.value(inputs[i]); }

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw std::out_of_range("unknown graph node " + std::to_string(id));
  return nodes_[id];
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw ShapeError("leaf value must be a non-empty tensor");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::leaf(Shape shape, std::vector<float> data, bool requires_grad) {
  return leaf(Tensor(std::move(shape), std::move(data)), requires_grad);
}

NodeId Graph::record(std::string op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  if (consumed_) throw std::logic_error("graph already consumed by backward()");
  bool needs_grad = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw std::out_of_range("op '" + op + "' references a future node");
    needs_grad = needs_grad || nodes_[in].requires_grad;
  }
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.requires_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

void Graph::set_scalar_f64(NodeId id, double v) {
  if (id >= nodes_.size()) throw std::out_of_range("unknown graph node " + std::to_string(id));
  Node& n = nodes_[id];
  if (n.value.numel() != 1) throw ShapeError("set_scalar_f64 on a non-scalar node");
  n.f64 = std::make_shared<const std::vector<double>>(1, v);
}

double Graph::scalar_f64(NodeId id) const {
  const Node& n = node(id);
  if (n.value.numel() != 1) throw ShapeError("scalar_f64 on a non-scalar node");
  return n.f64 ? n.f64->front() : static_cast<double>(n.value[0]);
}

void Graph::set_f64(NodeId id, std::vector<double> values) {
  if (id >= nodes_.size()) throw std::out_of_range("unknown graph node " + std::to_string(id));
  Node& n = nodes_[id];
  if (static_cast<std::int64_t>(values.size()) != n.value.numel()) throw ShapeError("set_f64: size mismatch");
  n.f64 = std::make_shared<const std::vector<double>>(std::move(values));
}

const std::vector<double>* Graph::f64(NodeId id) const { return node(id).f64.get(); }

std::vector<double> Graph::wide(NodeId id) const {
  const Node& n = node(id);
  if (n.f64) return *n.f64;
  return {n.value.data().begin(), n.value.data().end()};
}

GradientMap Graph::backward(NodeId loss) {
  if (consumed_) throw std::logic_error("backward() called twice on the same graph");
  const Node& loss_node = node(loss);
  if (loss_node.value.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_to_string(loss_node.value.shape()));
  }
  consumed_ = true;

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  if (loss_node.requires_grad) grads[loss] = Tensor(loss_node.value.shape(), 1.0f);

  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.is_leaf || !n.requires_grad || !grads[id]) continue;
    std::vector<Tensor*> input_grads(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const NodeId in = n.inputs[i];
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor::zeros(nodes_[in].value.shape());
      input_grads[i] = &*grads[in];
    }
    BackwardContext ctx{*this, n.inputs, n.value, *grads[id], input_grads};
    n.backward(ctx);
    // Intermediate gradients are dead once propagated.
    grads[id].reset();
  }

  GradientMap out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf || !n.requires_grad) continue;
    out.emplace(id, grads[id] ? std::move(*grads[id]) : Tensor::zeros(n.value.shape()));
  }
  return out;
}

}  // namespace vaeseg
