#pragma once

#include <functional>

#include "ufdn/tensor.hpp"

namespace ufdn {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Largest slot-wise relative error between the reverse-mode gradient of `f`
/// at `x` and central differences with step `eps`. The relative error of a
/// slot is |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// Reverse-mode gradient of `f` at `x`.
Tensor gradient(const ScalarFn& f, const Tensor& x);

}  // namespace ufdn
