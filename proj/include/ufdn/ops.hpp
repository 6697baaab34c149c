#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ufdn/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the
// graph of its tracked operands; untracked operands are treated as constants.
namespace ufdn {

/// Lower bound applied to arguments of log and to denominators.
inline constexpr double kLogFloor = 1e-7;

Tensor matmul(const Tensor& a, const Tensor& b);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Cross-correlation of x [B,Cin,H,W] with w [Cout,Cin,kh,kw] plus bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry geom);

/// Adjoint of conv2d for the same kernel: x [B,C1,H,W], w [C1,C2,kh,kw],
/// bias [C2]; output [B,C2,(H-1)*stride-2*pad+kh, ...].
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry geom);

// Binary ops accept equal shapes or one operand with a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor exp(const Tensor& x);
/// log(max(x, kLogFloor)); zero gradient where the floor is active.
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor clamp(const Tensor& x, double lo, double hi);

/// Adds bias [C] along axis 1 of x [B,C,...].
Tensor add_bias(const Tensor& x, const Tensor& bias);

enum class Reduction { Sum, Mean };

/// Reduces over `axes` (all axes when empty or absent); reduced axes are dropped.
Tensor reduce(Reduction kind, const Tensor& x, std::optional<std::vector<std::size_t>> axes = {});
inline Tensor sum(const Tensor& x, std::optional<std::vector<std::size_t>> axes = {}) {
  return reduce(Reduction::Sum, x, std::move(axes));
}
inline Tensor mean(const Tensor& x, std::optional<std::vector<std::size_t>> axes = {}) {
  return reduce(Reduction::Mean, x, std::move(axes));
}

Tensor concat(std::span<const Tensor> tensors, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> tensors, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
/// Rows of x [B,...] at `rows`, in order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Mean over the batch of -sum_i target_i * log_softmax(logits)_i, where each
/// target row is a probability distribution.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target);
/// Class-index form of the same loss.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> classes);

/// Row-wise softmax of an untracked [B,N] tensor (no graph recording).
Tensor softmax(const Tensor& logits);

}  // namespace ufdn
