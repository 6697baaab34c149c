#include "ufdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ufdn/errors.hpp"

namespace ufdn {

Tensor gradient(const ScalarFn& f, const Tensor& x) {
  Graph graph;
  Tensor leaf = graph.leaf(x);
  Tensor y = f(leaf);
  if (!y.tracked()) return Tensor(x.shape());
  return graph.backward(y).of(leaf);
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("grad_check: eps must lie in (0, 1e-2]");
  const Tensor analytic = gradient(f, x);
  Tensor probe = x.detach();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe.mutable_values()[i] = orig + eps;
    const double up = f(probe).item();
    probe.mutable_values()[i] = orig - eps;
    const double down = f(probe).item();
    probe.mutable_values()[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ufdn
