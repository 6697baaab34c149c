#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ufdn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

/// Dense row-major array of doubles. Copies share storage; a tensor may be
/// attached to a node of a Graph, in which case operations on it are recorded
/// for reverse-mode differentiation.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> values() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  /// Writable view of the data. Detaches from any graph and copies the
  /// storage first if it is shared with another tensor.
  std::span<double> mutable_values();

  bool tracked() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  std::size_t node() const { return node_; }

  /// Same values, no graph attachment.
  Tensor detach() const;

  /// Untracked view with a new shape of equal size.
  Tensor with_shape(Shape shape) const;

 private:
  friend class Graph;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  std::size_t node_ = 0;
};

/// Accumulation target for an input gradient; null when that input is not
/// tracked and its gradient need not be computed.
using GradBuffer = std::vector<double>*;

using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const GradBuffer> grad_in)>;

class Gradients;

/// Append-only tape. Node ids are assigned in creation order, so every node's
/// inputs precede it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Starts tracking `value` as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  /// Records the result of an operation. If none of `inputs` is tracked the
  /// value is returned untracked and nothing is recorded.
  static Tensor record(Tensor value, std::span<const Tensor> inputs, BackwardFn backward);

  /// Gradient of the scalar `root` with respect to every node of this graph.
  Gradients backward(const Tensor& root) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::size_t size = 0;
    std::vector<std::ptrdiff_t> inputs;  // -1 marks an untracked input
    BackwardFn backward;
  };

  Tensor attach(Tensor value, Node node);

  std::vector<Node> nodes_;
};

class Gradients {
 public:
  /// Gradient with respect to `t`; exact zeros if no path reaches it.
  Tensor of(const Tensor& t) const;

 private:
  friend class Graph;

  const Graph* graph_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

}  // namespace ufdn
