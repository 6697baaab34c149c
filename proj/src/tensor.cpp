#include "ufdn/tensor.hpp"

#include <numeric>
#include <sstream>

#include "ufdn/errors.hpp"

namespace ufdn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_size(shape_), 0.0)) {
  for (auto extent : shape_)
    if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
  for (auto extent : shape_)
    if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape_));
  if (shape_size(shape_) != data_->size())
    throw DimensionError("shape " + shape_str(shape_) + " does not hold " +
                         std::to_string(data_->size()) + " values");
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

std::span<double> Tensor::mutable_values() {
  graph_ = nullptr;
  node_ = 0;
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return *data_;
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.graph_ = nullptr;
  t.node_ = 0;
  return t;
}

Tensor Tensor::with_shape(Shape shape) const {
  if (shape_size(shape) != size())
    throw DimensionError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  Tensor t = detach();
  t.shape_ = std::move(shape);
  return t;
}

Tensor Graph::attach(Tensor value, Node node) {
  node.size = value.size();
  nodes_.push_back(std::move(node));
  value.graph_ = this;
  value.node_ = nodes_.size() - 1;
  return value;
}

Tensor Graph::leaf(const Tensor& value) { return attach(value.detach(), Node{}); }

Tensor Graph::record(Tensor value, std::span<const Tensor> inputs, BackwardFn backward) {
  Graph* graph = nullptr;
  for (const auto& in : inputs) {
    if (!in.tracked()) continue;
    if (graph && in.graph() != graph)
      throw ContractError("operation mixes tensors from different graphs");
    graph = in.graph();
  }
  value = value.detach();
  if (!graph) return value;

  Node node;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs)
    node.inputs.push_back(in.tracked() ? static_cast<std::ptrdiff_t>(in.node()) : -1);
  node.backward = std::move(backward);
  return graph->attach(std::move(value), std::move(node));
}

Gradients Graph::backward(const Tensor& root) const {
  if (root.graph() != this) throw ContractError("backward root does not belong to this graph");
  if (root.size() != 1)
    throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));

  Gradients out;
  out.graph_ = this;
  out.grads_.resize(nodes_.size());
  out.grads_[root.node()].assign(1, 1.0);

  std::vector<GradBuffer> buffers;
  for (std::size_t id = root.node() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (out.grads_[id].empty() || !node.backward) continue;
    buffers.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto in = node.inputs[i];
      if (in < 0) continue;
      auto& g = out.grads_[static_cast<std::size_t>(in)];
      if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(in)].size, 0.0);
      buffers[i] = &g;
    }
    node.backward(out.grads_[id], buffers);
  }
  return out;
}

Tensor Gradients::of(const Tensor& t) const {
  if (t.graph() != graph_) throw ContractError("tensor is not tracked on this graph");
  const auto& g = grads_[t.node()];
  if (g.empty()) return Tensor(t.shape());
  return Tensor(t.shape(), g);
}

}  // namespace ufdn
