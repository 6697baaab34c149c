#pragma once

#include <cstdint>
#include <random>

#include "ufdn/tensor.hpp"

namespace ufdn {

/// Combines two 64-bit values into a well-mixed seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);
Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi);

}  // namespace ufdn
