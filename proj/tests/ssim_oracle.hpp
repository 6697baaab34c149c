#pragma once

#include <cmath>
#include <cstddef>

#include "ufdn/tensor.hpp"

namespace ufdn::oracle {

// SSIM straight from the definition: for every valid window position, build
// the normalized 11x11 Gaussian weights, take weighted means, then weighted
// (two-pass) variances and covariance, and average the local index. No
// separability, no E[x^2] - mu^2 shortcut.
inline double ssim_direct(const Tensor& a, const Tensor& b) {
  constexpr int win = 11;
  constexpr double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double w[win][win];
  double wsum = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - 5, dj = j - 5;
      w[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      wsum += w[i][j];
    }
  for (auto& row : w)
    for (double& v : row) v /= wsum;

  const std::size_t c = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t h = a.dim(a.rank() - 2), wd = a.dim(a.rank() - 1);
  double channel_total = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto at = [&](const Tensor& t, std::size_t y, std::size_t x) { return t[(ch * h + y) * wd + x]; };
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + win <= h; ++y)
      for (std::size_t x = 0; x + win <= wd; ++x) {
        double ma = 0, mb = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            ma += w[i][j] * at(a, y + i, x + j);
            mb += w[i][j] * at(b, y + i, x + j);
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double da = at(a, y + i, x + j) - ma, db = at(b, y + i, x + j) - mb;
            va += w[i][j] * da * da;
            vb += w[i][j] * db * db;
            cov += w[i][j] * da * db;
          }
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    channel_total += acc / static_cast<double>(count);
  }
  return channel_total / static_cast<double>(c);
}

}  // namespace ufdn::oracle
