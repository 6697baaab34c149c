#include "ufdn/ops.hpp"

// Small products would otherwise take Eigen's coefficient-based path, whose
// summation order depends on buffer alignment and breaks bitwise replay.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ufdn/errors.hpp"

namespace ufdn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::vector<double>& data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor record(Tensor value, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  return Graph::record(std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                       std::move(fn));
}

void accumulate(GradBuffer dst, std::span<const double> src) {
  auto& d = *dst;
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

// ---------------------------------------------------------------------------
// Convolution lowering

struct ConvDims {
  std::size_t batch, channels, height, width;  // image side of im2col
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;                     // sliding positions

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return batch * out_h * out_w; }
};

// cols [C*kh*kw, B*out_h*out_w]
void im2col(const double* x, const ConvDims& d, double* cols) {
  const std::size_t ncols = d.cols();
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t ki = 0; ki < d.kh; ++ki)
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        double* row = cols + ((c * d.kh + ki) * d.kw + kj) * ncols;
        for (std::size_t b = 0; b < d.batch; ++b) {
          const double* img = x + (b * d.channels + c) * d.height * d.width;
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                            static_cast<std::ptrdiff_t>(d.pad);
            double* dst = row + (b * d.out_h + oy) * d.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) {
              std::fill(dst, dst + d.out_w, 0.0);
              continue;
            }
            const double* src = img + static_cast<std::size_t>(iy) * d.width;
            for (std::size_t ox = 0; ox < d.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                              static_cast<std::ptrdiff_t>(d.pad);
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width))
                            ? 0.0
                            : src[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into x.
void col2im(const double* cols, const ConvDims& d, double* x) {
  const std::size_t ncols = d.cols();
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t ki = 0; ki < d.kh; ++ki)
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const double* row = cols + ((c * d.kh + ki) * d.kw + kj) * ncols;
        for (std::size_t b = 0; b < d.batch; ++b) {
          double* img = x + (b * d.channels + c) * d.height * d.width;
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                            static_cast<std::ptrdiff_t>(d.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
            const double* src = row + (b * d.out_h + oy) * d.out_w;
            double* dst = img + static_cast<std::size_t>(iy) * d.width;
            for (std::size_t ox = 0; ox < d.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                              static_cast<std::ptrdiff_t>(d.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.width))
                dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
}

// [B,C,P] <-> [C,B*P]
std::vector<double> to_channel_major(std::span<const double> x, std::size_t batch,
                                     std::size_t channels, std::size_t plane) {
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(x.data() + (b * channels + c) * plane, plane,
                  out.data() + (c * batch + b) * plane);
  return out;
}

void from_channel_major(std::span<const double> x, std::size_t batch, std::size_t channels,
                        std::size_t plane, double* out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(x.data() + (c * batch + b) * plane, plane, out + (b * channels + c) * plane);
}

void check_conv_operands(const char* op, const Tensor& x, const Tensor& w, const Tensor& bias,
                         std::size_t x_channels_axis_w, std::size_t bias_axis_w) {
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError(std::string(op) + ": expected rank-4 input and kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(x_channels_axis_w)) shape_mismatch(op, x.shape(), w.shape());
  if (bias.rank() != 1 || bias.dim(0) != w.dim(bias_axis_w))
    shape_mismatch(op, w.shape(), bias.shape());
}

// ---------------------------------------------------------------------------
// Elementwise helpers

template <class F, class D>
Tensor unary(const Tensor& x, F f, D derivative) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor y(x.shape(), std::move(out));
  if (!x.tracked()) return y;
  Tensor xs = x.detach(), ys = y;
  return record(y, {x}, [xs, ys, derivative](std::span<const double> g, std::span<const GradBuffer> in) {
    auto& dx = *in[0];
    auto xv = xs.values();
    auto yv = ys.values();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * derivative(xv[i], yv[i]);
  });
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const char* name = kind == BinaryKind::Add ? "add" : kind == BinaryKind::Sub ? "sub" : "mul";
  const bool same = a.shape() == b.shape();
  if (!same && a.size() != 1 && b.size() != 1) shape_mismatch(name, a.shape(), b.shape());
  const bool a_bcast = !same && a.size() == 1;
  const bool b_bcast = !same && !a_bcast && b.size() == 1;
  const Shape& shape = a_bcast ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  auto av = a.values(), bv = b.values();
  auto at = [&](std::span<const double> v, bool bc, std::size_t i) { return bc ? v[0] : v[i]; };

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = at(av, a_bcast, i), y = at(bv, b_bcast, i);
    out[i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
  }
  Tensor result(shape, std::move(out));
  if (!a.tracked() && !b.tracked()) return result;

  Tensor as = a.detach(), bs = b.detach();
  return record(result, {a, b},
                [kind, as, bs, a_bcast, b_bcast](std::span<const double> g,
                                                 std::span<const GradBuffer> in) {
                  auto av = as.values(), bv = bs.values();
                  for (int side = 0; side < 2; ++side) {
                    GradBuffer dst = in[side];
                    if (!dst) continue;
                    const bool bc = side == 0 ? a_bcast : b_bcast;
                    auto other = side == 0 ? bv : av;
                    const bool other_bc = side == 0 ? b_bcast : a_bcast;
                    double total = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      double d;
                      switch (kind) {
                        case BinaryKind::Add: d = g[i]; break;
                        case BinaryKind::Sub: d = side == 0 ? g[i] : -g[i]; break;
                        default: d = g[i] * (other_bc ? other[0] : other[i]); break;
                      }
                      if (bc)
                        total += d;
                      else
                        (*dst)[i] += d;
                    }
                    if (bc) (*dst)[0] += total;
                  }
                });
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.values(), m, k) * as_matrix(b.values(), k, n);
  Tensor c({m, n}, std::move(out));
  if (!a.tracked() && !b.tracked()) return c;
  Tensor as = a.detach(), bs = b.detach();
  return record(c, {a, b}, [as, bs, m, k, n](std::span<const double> g, std::span<const GradBuffer> in) {
    auto gm = as_matrix(g, m, n);
    if (in[0]) as_matrix(*in[0], m, k).noalias() += gm * as_matrix(bs.values(), k, n).transpose();
    if (in[1]) as_matrix(*in[1], k, n).noalias() += as_matrix(as.values(), m, k).transpose() * gm;
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry geom) {
  check_conv_operands("conv2d", x, w, bias, 1, 0);
  if (geom.stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t B = x.dim(0), cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t s = geom.stride, p = geom.pad;
  if (H + 2 * p < kh || W + 2 * p < kw || (H + 2 * p - kh) % s != 0 || (W + 2 * p - kw) % s != 0)
    throw ConfigError("conv2d: input " + shape_str(x.shape()) + " with kernel " +
                      shape_str(w.shape()) + ", stride " + std::to_string(s) + ", pad " +
                      std::to_string(p) + " does not give an integral output size");
  ConvDims d{B, cin, H, W, kh, kw, s, p, (H + 2 * p - kh) / s + 1, (W + 2 * p - kw) / s + 1};
  const std::size_t K = d.rows(), N = d.cols(), plane = d.out_h * d.out_w;

  auto cols = std::make_shared<std::vector<double>>(K * N);
  im2col(x.values().data(), d, cols->data());
  std::vector<double> ycm(cout * N);
  as_matrix(ycm, cout, N).noalias() =
      as_matrix(w.values(), cout, K) * as_matrix(std::span<const double>(*cols), K, N);
  std::vector<double> out(B * cout * plane);
  from_channel_major(ycm, B, cout, plane, out.data());
  auto bv = bias.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < cout; ++c) {
      double* dst = out.data() + (b * cout + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += bv[c];
    }
  Tensor y({B, cout, d.out_h, d.out_w}, std::move(out));
  if (!x.tracked() && !w.tracked() && !bias.tracked()) return y;

  Tensor ws = w.detach();
  return record(y, {x, w, bias},
                [d, ws, cols, cout, plane](std::span<const double> g,
                                           std::span<const GradBuffer> in) {
                  const std::size_t K = d.rows(), N = d.cols();
                  auto gcm = to_channel_major(g, d.batch, cout, plane);
                  auto gm = as_matrix(std::span<const double>(gcm), cout, N);
                  if (in[1])
                    as_matrix(*in[1], cout, K).noalias() +=
                        gm * as_matrix(std::span<const double>(*cols), K, N).transpose();
                  if (in[2])
                    for (std::size_t c = 0; c < cout; ++c) {
                      double acc = 0;
                      for (std::size_t i = 0; i < N; ++i) acc += gcm[c * N + i];
                      (*in[2])[c] += acc;
                    }
                  if (in[0]) {
                    std::vector<double> dcols(K * N);
                    as_matrix(dcols, K, N).noalias() =
                        as_matrix(ws.values(), cout, K).transpose() * gm;
                    col2im(dcols.data(), d, in[0]->data());
                  }
                });
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry geom) {
  check_conv_operands("conv2d_transpose", x, w, bias, 0, 1);
  if (geom.stride == 0) throw ConfigError("conv2d_transpose: stride must be positive");
  const std::size_t B = x.dim(0), c1 = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t c2 = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t s = geom.stride, p = geom.pad;
  if ((H - 1) * s + kh <= 2 * p || (W - 1) * s + kw <= 2 * p)
    throw ConfigError("conv2d_transpose: input " + shape_str(x.shape()) + " with kernel " +
                      shape_str(w.shape()) + " gives a non-positive output size");
  const std::size_t Ho = (H - 1) * s + kh - 2 * p, Wo = (W - 1) * s + kw - 2 * p;
  // The im2col geometry of the output image reproduces exactly H x W positions.
  ConvDims d{B, c2, Ho, Wo, kh, kw, s, p, H, W};
  const std::size_t K = d.rows(), N = d.cols(), plane = H * W, out_plane = Ho * Wo;

  auto xcm = std::make_shared<std::vector<double>>(to_channel_major(x.values(), B, c1, plane));
  std::vector<double> cols(K * N);
  as_matrix(cols, K, N).noalias() =
      as_matrix(w.values(), c1, K).transpose() * as_matrix(std::span<const double>(*xcm), c1, N);
  std::vector<double> out(B * c2 * out_plane, 0.0);
  col2im(cols.data(), d, out.data());
  auto bv = bias.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < c2; ++c) {
      double* dst = out.data() + (b * c2 + c) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) dst[i] += bv[c];
    }
  Tensor y({B, c2, Ho, Wo}, std::move(out));
  if (!x.tracked() && !w.tracked() && !bias.tracked()) return y;

  Tensor ws = w.detach();
  return record(y, {x, w, bias},
                [d, ws, xcm, c1, c2, plane, out_plane](std::span<const double> g,
                                                       std::span<const GradBuffer> in) {
                  const std::size_t K = d.rows(), N = d.cols();
                  if (in[2])
                    for (std::size_t b = 0; b < d.batch; ++b)
                      for (std::size_t c = 0; c < c2; ++c) {
                        const double* src = g.data() + (b * c2 + c) * out_plane;
                        (*in[2])[c] += std::accumulate(src, src + out_plane, 0.0);
                      }
                  if (!in[0] && !in[1]) return;
                  std::vector<double> gcols(K * N);
                  im2col(g.data(), d, gcols.data());
                  auto gc = as_matrix(std::span<const double>(gcols), K, N);
                  if (in[1])
                    as_matrix(*in[1], c1, K).noalias() +=
                        as_matrix(std::span<const double>(*xcm), c1, N) * gc.transpose();
                  if (in[0]) {
                    std::vector<double> dxcm(c1 * N);
                    as_matrix(dxcm, c1, N).noalias() = as_matrix(ws.values(), c1, K) * gc;
                    std::vector<double> dx(dxcm.size());
                    from_channel_major(dxcm, d.batch, c1, plane, dx.data());
                    accumulate(in[0], dx);
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::Mul, a, b); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return unary(x, [alpha](double v) { return v > 0 ? v : alpha * v; },
               [alpha](double v, double) { return v > 0 ? 1.0 : alpha; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lower bound exceeds upper bound");
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    shape_mismatch("add_bias", x.shape(), bias.shape());
  const std::size_t outer = x.dim(0), channels = x.dim(1), inner = x.size() / (outer * channels);
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) out[(o * channels + c) * inner + i] += bv[c];
  Tensor y(x.shape(), std::move(out));
  return record(y, {x, bias},
                [outer, channels, inner](std::span<const double> g, std::span<const GradBuffer> in) {
                  if (in[0]) accumulate(in[0], g);
                  if (in[1])
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t c = 0; c < channels; ++c)
                        for (std::size_t i = 0; i < inner; ++i)
                          (*in[1])[c] += g[(o * channels + c) * inner + i];
                });
}

Tensor reduce(Reduction kind, const Tensor& x, std::optional<std::vector<std::size_t>> axes) {
  std::vector<bool> reduced(x.rank(), false);
  if (!axes || axes->empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (auto a : *axes) {
      if (a >= x.rank())
        throw DimensionError("reduce: axis " + std::to_string(a) + " invalid for shape " +
                             shape_str(x.shape()));
      reduced[a] = true;
    }
  }
  Shape out_shape;
  for (std::size_t a = 0; a < x.rank(); ++a)
    if (!reduced[a]) out_shape.push_back(x.dim(a));

  // Output slot of each input element.
  auto index = std::make_shared<std::vector<std::size_t>>(x.size());
  {
    std::vector<std::size_t> counter(x.rank(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t a = 0; a < x.rank(); ++a)
        if (!reduced[a]) o = o * x.dim(a) + counter[a];
      (*index)[flat] = o;
      for (std::size_t a = x.rank(); a-- > 0;) {
        if (++counter[a] < x.dim(a)) break;
        counter[a] = 0;
      }
    }
  }
  const std::size_t n_out = shape_size(out_shape);
  const double factor =
      kind == Reduction::Mean ? static_cast<double>(n_out) / static_cast<double>(x.size()) : 1.0;
  std::vector<double> out(n_out, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out[(*index)[i]] += xv[i];
  if (kind == Reduction::Mean)
    for (auto& v : out) v *= factor;
  Tensor y(out_shape, std::move(out));
  if (!x.tracked()) return y;
  return record(y, {x}, [index, factor](std::span<const double> g, std::span<const GradBuffer> in) {
    auto& dx = *in[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[(*index)[i]] * factor;
  });
}

Tensor concat(std::span<const Tensor> tensors, std::size_t axis) {
  if (tensors.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = tensors[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const auto& t : tensors) {
    if (t.rank() != ref.size()) shape_mismatch("concat", ref, t.shape());
    for (std::size_t a = 0; a < ref.size(); ++a)
      if (a != axis && t.dim(a) != ref[a]) shape_mismatch("concat", ref, t.shape());
    total += t.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (std::size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];

  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> widths, offsets;
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    const std::size_t width = t.dim(axis) * inner;
    auto tv = t.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(tv.data() + o * width, width, out.data() + o * total * inner + offset);
    widths.push_back(width);
    offsets.push_back(offset);
    offset += width;
  }
  Tensor y(out_shape, std::move(out));
  const std::size_t row = total * inner;
  return Graph::record(y, tensors,
                       [widths, offsets, outer, row](std::span<const double> g,
                                                     std::span<const GradBuffer> in) {
                         for (std::size_t k = 0; k < in.size(); ++k) {
                           if (!in[k]) continue;
                           auto& d = *in[k];
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < widths[k]; ++i)
                               d[o * widths[k] + i] += g[o * row + offsets[k] + i];
                         }
                       });
}

Tensor concat(std::initializer_list<Tensor> tensors, std::size_t axis) {
  return concat(std::span<const Tensor>(tensors.begin(), tensors.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t row = x.dim(axis) * inner, width = length * inner, offset = start * inner;
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(outer * width);
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + o * row + offset, width, out.data() + o * width);
  Tensor y(out_shape, std::move(out));
  return record(y, {x}, [outer, row, width, offset](std::span<const double> g,
                                                    std::span<const GradBuffer> in) {
    auto& d = *in[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < width; ++i) d[o * row + offset + i] += g[o * width + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor y = x.with_shape(std::move(shape));
  return record(y, {x}, [](std::span<const double> g, std::span<const GradBuffer> in) {
    accumulate(in[0], g);
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1 || rows.empty()) throw DimensionError("gather_rows: empty selection");
  const std::size_t width = x.size() / x.dim(0);
  for (auto r : rows)
    if (r >= x.dim(0))
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " +
                           shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * width, width, out.data() + i * width);
  Tensor y(out_shape, std::move(out));
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record(y, {x}, [idx, width](std::span<const double> g, std::span<const GradBuffer> in) {
    auto& d = *in[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) d[idx[i] * width + j] += g[i * width + j];
  });
}

namespace {

// Shifted-max log-softmax of one row.
void log_softmax_row(const double* logits, std::size_t n, double* out) {
  const double m = *std::max_element(logits, logits + n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(logits[i] - m);
  const double lz = std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - m - lz;
}

Tensor cross_entropy_impl(const Tensor& logits, std::vector<double> target) {
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  std::vector<double> logp(B * N);
  auto lv = logits.values();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    log_softmax_row(lv.data() + b * N, N, logp.data() + b * N);
    for (std::size_t i = 0; i < N; ++i)
      if (target[b * N + i] != 0.0) total -= target[b * N + i] * logp[b * N + i];
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(B));
  if (!logits.tracked()) return y;
  return record(y, {logits},
                [logp = std::move(logp), target = std::move(target), B](
                    std::span<const double> g, std::span<const GradBuffer> in) {
                  auto& d = *in[0];
                  const double f = g[0] / static_cast<double>(B);
                  for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += f * (std::exp(logp[i]) - target[i]);
                });
}

void check_logits(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("cross-entropy logits must be [B,N], got " + shape_str(logits.shape()));
  if (logits.dim(1) < 2) throw DimensionError("cross-entropy needs at least two classes");
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target) {
  check_logits(logits);
  if (target.shape() != logits.shape())
    shape_mismatch("softmax_cross_entropy", logits.shape(), target.shape());
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  auto tv = target.values();
  for (std::size_t b = 0; b < B; ++b) {
    double row = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double t = tv[b * N + i];
      if (!(t >= 0.0) || !std::isfinite(t))
        throw ValidationError("target row " + std::to_string(b) + " has a negative or non-finite entry");
      row += t;
    }
    if (std::abs(row - 1.0) > 1e-9)
      throw ValidationError("target row " + std::to_string(b) + " sums to " + std::to_string(row) +
                            ", expected 1");
  }
  return cross_entropy_impl(logits, std::vector<double>(tv.begin(), tv.end()));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> classes) {
  check_logits(logits);
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  if (classes.size() != B)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(classes.size()) +
                         " labels for " + std::to_string(B) + " rows");
  std::vector<double> target(B * N, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (classes[b] < 0 || static_cast<std::size_t>(classes[b]) >= N)
      throw ValidationError("class index " + std::to_string(classes[b]) + " out of range [0," +
                            std::to_string(N) + ")");
    target[b * N + static_cast<std::size_t>(classes[b])] = 1.0;
  }
  return cross_entropy_impl(logits, std::move(target));
}

Tensor softmax(const Tensor& logits) {
  check_logits(logits);
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  std::vector<double> out(B * N);
  auto lv = logits.values();
  for (std::size_t b = 0; b < B; ++b) {
    log_softmax_row(lv.data() + b * N, N, out.data() + b * N);
    for (std::size_t i = 0; i < N; ++i) out[b * N + i] = std::exp(out[b * N + i]);
  }
  return Tensor(logits.shape(), std::move(out));
}

}  // namespace ufdn
