#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cxrnet/error.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr {

/// 2-D convolution over NHWC input. weights: [kernel_h x kernel_w x in_channels x filters].
template <typename T>
struct Conv2D {
  std::size_t in_channels = 0;
  std::size_t filters = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  BasicTensor<T> weights;
  BasicTensor<T> bias;

  static Conv2D make(std::size_t in_channels, std::size_t filters, std::size_t kernel_h, std::size_t kernel_w,
                     std::size_t stride = 1, std::size_t padding = 0) {
    if (in_channels == 0 || filters == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0) {
      throw ConfigError("conv2d: channels, filters, kernel and stride must be >= 1");
    }
    Conv2D c{in_channels, filters, kernel_h, kernel_w, stride, padding, {}, {}};
    c.weights = BasicTensor<T>(Shape{kernel_h, kernel_w, in_channels, filters});
    c.bias = BasicTensor<T>(Shape{filters});
    return c;
  }

  /// Output [H' x W' x filters] for a per-sample input [H x W x C].
  Shape output_shape(const Shape& in) const {
    if (in.size() != 3) throw ShapeError("conv2d: expected [H x W x C], got " + to_string(in));
    if (in[2] != in_channels) {
      throw ShapeError("conv2d: channel mismatch, layer expects " + std::to_string(in_channels) + ", input " +
                       to_string(in));
    }
    const std::size_t ph = in[0] + 2 * padding, pw = in[1] + 2 * padding;
    if (ph < kernel_h || pw < kernel_w) throw ShapeError("conv2d: input " + to_string(in) + " smaller than kernel");
    return {(ph - kernel_h) / stride + 1, (pw - kernel_w) / stride + 1, filters};
  }

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

template <typename T>
struct ConvGradients {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

namespace detail {

inline Shape per_sample(const Shape& nhwc, const char* who) {
  if (nhwc.size() != 4) throw ShapeError(std::string(who) + ": expected [N x H x W x C], got " + to_string(nhwc));
  return {nhwc[1], nhwc[2], nhwc[3]};
}

// Unrolls one padded sample into rows of receptive fields:
// col[(i * out_w + j) * K + (a * kw + b) * C + c] = in[i*s + a - pad, j*s + b - pad, c].
template <typename T>
void im2col(const Conv2D<T>& L, const T* in, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w,
            T* col) {
  const std::size_t C = L.in_channels;
  const std::size_t K = L.kernel_h * L.kernel_w * C;
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      T* row = col + (i * out_w + j) * K;
      for (std::size_t a = 0; a < L.kernel_h; ++a) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * L.stride + a) - static_cast<std::ptrdiff_t>(L.padding);
        for (std::size_t b = 0; b < L.kernel_w; ++b) {
          const std::ptrdiff_t x =
              static_cast<std::ptrdiff_t>(j * L.stride + b) - static_cast<std::ptrdiff_t>(L.padding);
          T* dst = row + (a * L.kernel_w + b) * C;
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) {
            std::fill(dst, dst + C, T{});
          } else {
            const T* src = in + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * C;
            std::copy(src, src + C, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Conv2D<T>& L, const T* col, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w,
                T* in_grad) {
  const std::size_t C = L.in_channels;
  const std::size_t K = L.kernel_h * L.kernel_w * C;
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      const T* row = col + (i * out_w + j) * K;
      for (std::size_t a = 0; a < L.kernel_h; ++a) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * L.stride + a) - static_cast<std::ptrdiff_t>(L.padding);
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t b = 0; b < L.kernel_w; ++b) {
          const std::ptrdiff_t x =
              static_cast<std::ptrdiff_t>(j * L.stride + b) - static_cast<std::ptrdiff_t>(L.padding);
          if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = row + (a * L.kernel_w + b) * C;
          T* dst = in_grad + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

/// out[n,i,j,f] = bias[f] + sum_{a,b,c} in_padded[n, i*s+a, j*s+b, c] * w[a,b,c,f],
/// evaluated per sample as an im2col matrix times the [K x filters] weight matrix.
template <typename T>
BasicTensor<T> conv2d_forward(const Conv2D<T>& L, const BasicTensor<T>& input) {
  const Shape in = detail::per_sample(input.shape(), "conv2d");
  const Shape out = L.output_shape(in);
  const std::size_t n = input.dim(0);
  const std::size_t P = out[0] * out[1];
  const std::size_t K = L.kernel_h * L.kernel_w * L.in_channels;
  const std::size_t F = L.filters;
  const std::size_t in_stride = in[0] * in[1] * in[2];

  BasicTensor<T> result(Shape{n, out[0], out[1], F});
  std::vector<T> col(P * K);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(L, input.raw() + s * in_stride, in[0], in[1], out[0], out[1], col.data());
    T* dst = result.raw() + s * P * F;
    for (std::size_t p = 0; p < P; ++p) std::copy(L.bias.raw(), L.bias.raw() + F, dst + p * F);
    detail::gemm(false, false, P, F, K, col.data(), L.weights.raw(), dst, true);
  }
  return result;
}

template <typename T>
ConvGradients<T> conv2d_backward(const Conv2D<T>& L, const BasicTensor<T>& cached_input,
                                 const BasicTensor<T>& upstream) {
  const Shape in = detail::per_sample(cached_input.shape(), "conv2d_backward");
  const Shape out = L.output_shape(in);
  const std::size_t n = cached_input.dim(0);
  if (upstream.shape() != Shape{n, out[0], out[1], out[2]}) {
    throw ShapeError("conv2d_backward: upstream " + to_string(upstream.shape()) + " does not match output " +
                     to_string(Shape{n, out[0], out[1], out[2]}));
  }
  const std::size_t P = out[0] * out[1];
  const std::size_t K = L.kernel_h * L.kernel_w * L.in_channels;
  const std::size_t F = L.filters;
  const std::size_t in_stride = in[0] * in[1] * in[2];

  ConvGradients<T> g{BasicTensor<T>(cached_input.shape()), BasicTensor<T>(L.weights.shape()),
                     BasicTensor<T>(L.bias.shape())};
  std::vector<T> col(P * K);
  std::vector<T> dcol(P * K);
  for (std::size_t s = 0; s < n; ++s) {
    const T* dout = upstream.raw() + s * P * F;
    detail::im2col(L, cached_input.raw() + s * in_stride, in[0], in[1], out[0], out[1], col.data());
    // dW[K x F] += col^T * dout
    detail::gemm(true, false, K, F, P, col.data(), dout, g.weights.raw(), true);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t f = 0; f < F; ++f) g.bias[f] += dout[p * F + f];
    // dcol[P x K] = dout * W^T
    detail::gemm(false, true, P, K, F, dout, L.weights.raw(), dcol.data(), false);
    detail::col2im_add(L, dcol.data(), in[0], in[1], out[0], out[1], g.input.raw() + s * in_stride);
  }
  return g;
}

struct MaxPool2D {
  std::size_t window_h = 2;
  std::size_t window_w = 2;
  std::size_t stride = 2;

  /// Floor semantics: trailing rows/columns that do not fill a window are dropped.
  Shape output_shape(const Shape& in) const {
    if (window_h == 0 || window_w == 0 || stride == 0) throw ConfigError("maxpool: window and stride must be >= 1");
    if (in.size() != 3) throw ShapeError("maxpool: expected [H x W x C], got " + to_string(in));
    if (in[0] < window_h || in[1] < window_w) throw ShapeError("maxpool: input " + to_string(in) + " smaller than window");
    return {(in[0] - window_h) / stride + 1, (in[1] - window_w) / stride + 1, in[2]};
  }
};

/// Flat input offset of the element each pooled output came from.
struct PoolIndices {
  Shape input_shape;
  std::vector<std::size_t> source;
};

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  PoolIndices indices;
};

template <typename T>
PoolResult<T> maxpool_forward(const MaxPool2D& L, const BasicTensor<T>& input) {
  const Shape in = detail::per_sample(input.shape(), "maxpool");
  const Shape out = L.output_shape(in);
  const std::size_t n = input.dim(0), C = in[2];
  PoolResult<T> r{BasicTensor<T>(Shape{n, out[0], out[1], C}), {input.shape(), {}}};
  r.indices.source.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t base = s * in[0] * in[1] * C;
    for (std::size_t i = 0; i < out[0]; ++i) {
      for (std::size_t j = 0; j < out[1]; ++j) {
        for (std::size_t c = 0; c < C; ++c, ++o) {
          std::size_t best = base + ((i * L.stride) * in[1] + j * L.stride) * C + c;
          for (std::size_t a = 0; a < L.window_h; ++a) {
            for (std::size_t b = 0; b < L.window_w; ++b) {
              const std::size_t idx = base + ((i * L.stride + a) * in[1] + (j * L.stride + b)) * C + c;
              if (input[idx] > input[best]) best = idx;  // strict: first maximum wins
            }
          }
          r.output[o] = input[best];
          r.indices.source[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool_backward(const MaxPool2D&, const PoolIndices& indices, const BasicTensor<T>& upstream) {
  if (upstream.size() != indices.source.size()) {
    throw ShapeError("maxpool_backward: upstream " + to_string(upstream.shape()) + " has " +
                     std::to_string(upstream.size()) + " elements, forward produced " +
                     std::to_string(indices.source.size()));
  }
  BasicTensor<T> grad(indices.input_shape);
  for (std::size_t o = 0; o < upstream.size(); ++o) grad[indices.source[o]] += upstream[o];
  return grad;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.data()) v = v > T{} ? v : T{};
  return out;
}

/// Passes upstream where the input was strictly positive; the derivative at 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& cached_input, const BasicTensor<T>& upstream) {
  if (cached_input.shape() != upstream.shape()) {
    throw ShapeError("relu_backward: shape mismatch " + to_string(cached_input.shape()) + " vs " +
                     to_string(upstream.shape()));
  }
  BasicTensor<T> g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(cached_input[i] > T{})) g[i] = T{};
  }
  return g;
}

/// Fully connected layer: out = input * weights + bias, weights [in_units x out_units].
template <typename T>
struct Dense {
  std::size_t in_units = 0;
  std::size_t out_units = 0;
  BasicTensor<T> weights;
  BasicTensor<T> bias;

  static Dense make(std::size_t in_units, std::size_t out_units) {
    if (in_units == 0 || out_units == 0) throw ConfigError("dense: unit counts must be >= 1");
    return {in_units, out_units, BasicTensor<T>(Shape{in_units, out_units}), BasicTensor<T>(Shape{out_units})};
  }

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

template <typename T>
struct DenseGradients {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
BasicTensor<T> dense_forward(const Dense<T>& L, const BasicTensor<T>& input) {
  if (input.rank() != 2 || input.dim(1) != L.in_units) {
    throw ShapeError("dense: input " + to_string(input.shape()) + " does not match " + std::to_string(L.in_units) +
                     " input units");
  }
  const std::size_t n = input.dim(0);
  BasicTensor<T> out(Shape{n, L.out_units});
  for (std::size_t r = 0; r < n; ++r) std::copy(L.bias.raw(), L.bias.raw() + L.out_units, out.raw() + r * L.out_units);
  detail::gemm(false, false, n, L.out_units, L.in_units, input.raw(), L.weights.raw(), out.raw(), true);
  return out;
}

template <typename T>
DenseGradients<T> dense_backward(const Dense<T>& L, const BasicTensor<T>& cached_input,
                                 const BasicTensor<T>& upstream) {
  if (cached_input.rank() != 2 || cached_input.dim(1) != L.in_units) {
    throw ShapeError("dense_backward: input " + to_string(cached_input.shape()) + " does not match layer");
  }
  const std::size_t n = cached_input.dim(0);
  if (upstream.shape() != Shape{n, L.out_units}) {
    throw ShapeError("dense_backward: upstream " + to_string(upstream.shape()) + " expected " +
                     to_string(Shape{n, L.out_units}));
  }
  DenseGradients<T> g{BasicTensor<T>(cached_input.shape()), BasicTensor<T>(L.weights.shape()),
                      BasicTensor<T>(L.bias.shape())};
  detail::gemm(false, true, n, L.in_units, L.out_units, upstream.raw(), L.weights.raw(), g.input.raw(), false);
  detail::gemm(true, false, L.in_units, L.out_units, n, cached_input.raw(), upstream.raw(), g.weights.raw(), false);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < L.out_units; ++j) g.bias[j] += upstream[r * L.out_units + j];
  return g;
}

/// Row-wise softmax of [N x K] logits, computed as exp(x - max) / sum.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: expected [N x K], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = logits.raw() + r * k;
    T* y = out.raw() + r * k;
    const T m = *std::max_element(x, x + k);
    T sum{};
    for (std::size_t j = 0; j < k; ++j) {
      y[j] = std::exp(x[j] - m);
      sum += y[j];
    }
    for (std::size_t j = 0; j < k; ++j) y[j] /= sum;
  }
  return out;
}

}  // namespace cxr
