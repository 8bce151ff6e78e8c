#pragma once

// Reference implementations used only by the tests. They follow the textbook
// definitions directly and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cxrnet/random.hpp"
#include "cxrnet/tensor.hpp"

namespace oracle {

using cxr::Shape;
using cxr::Tensor64;

/// c[i][j] = sum_p a[i][p] * b[p][j] with plain nested loops.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

/// Direct evaluation of the convolution sum over an implicitly zero-padded input.
/// input NHWC, weights [kh x kw x C x F].
inline std::vector<double> conv2d_direct(const std::vector<double>& input, std::size_t n, std::size_t h,
                                         std::size_t w, std::size_t c, const std::vector<double>& weights,
                                         std::size_t kh, std::size_t kw, std::size_t f,
                                         const std::vector<double>& bias, std::size_t stride, std::size_t pad,
                                         std::size_t& out_h, std::size_t& out_w) {
  out_h = (h + 2 * pad - kh) / stride + 1;
  out_w = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * out_h * out_w * f);
  auto in_at = [&](std::size_t s, long y, long x, std::size_t ch) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return input[((s * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)) * c + ch];
  };
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j)
        for (std::size_t ff = 0; ff < f; ++ff) {
          double acc = bias[ff];
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b)
              for (std::size_t ch = 0; ch < c; ++ch) {
                const long y = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long x = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                acc += in_at(s, y, x, ch) * weights[((a * kw + b) * c + ch) * f + ff];
              }
          out[((s * out_h + i) * out_w + j) * f + ff] = acc;
        }
  return out;
}

/// Bilinear resize of a single-channel image, half-pixel centers, edge clamp.
/// Written point-by-point: for each output pixel locate the source point and
/// blend the four neighbours with explicit area weights.
inline std::vector<double> bilinear(const std::vector<double>& img, std::size_t h, std::size_t w, std::size_t oh,
                                    std::size_t ow) {
  std::vector<double> out(oh * ow);
  auto px = [&](long y, long x) {
    y = std::min<long>(std::max<long>(y, 0), static_cast<long>(h) - 1);
    x = std::min<long>(std::max<long>(x, 0), static_cast<long>(w) - 1);
    return img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double sy = (oy + 0.5) * static_cast<double>(h) / static_cast<double>(oh) - 0.5;
      double sx = (ox + 0.5) * static_cast<double>(w) / static_cast<double>(ow) - 0.5;
      sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
      sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
      const long y0 = static_cast<long>(std::floor(sy));
      const long x0 = static_cast<long>(std::floor(sx));
      const double dy = sy - y0, dx = sx - x0;
      out[oy * ow + ox] = (1 - dy) * (1 - dx) * px(y0, x0) + (1 - dy) * dx * px(y0, x0 + 1) +
                          dy * (1 - dx) * px(y0 + 1, x0) + dy * dx * px(y0 + 1, x0 + 1);
    }
  return out;
}

/// Central finite difference of a scalar function at a coordinate of x.
inline double central_difference(const std::function<double()>& f, double& coordinate, double step = 1e-5) {
  const double saved = coordinate;
  coordinate = saved + step;
  const double up = f();
  coordinate = saved - step;
  const double down = f();
  coordinate = saved;
  return (up - down) / (2.0 * step);
}

/// Relative error with a floor on the denominator so near-zero gradients
/// are compared absolutely.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Tensor64 random_tensor(Shape shape, cxr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Up to `count` distinct seeded coordinates of a tensor with `size` elements
/// (all of them when size <= count).
inline std::vector<std::size_t> sample_coordinates(std::size_t size, std::size_t count, cxr::Rng& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  if (size <= count) return idx;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

}  // namespace oracle
