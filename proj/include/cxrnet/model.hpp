#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "cxrnet/dataset.hpp"
#include "cxrnet/error.hpp"
#include "cxrnet/layers.hpp"
#include "cxrnet/random.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr {

struct ReLU {};
struct Flatten {};
struct Softmax {};

template <typename T>
using Layer = std::variant<Conv2D<T>, ReLU, MaxPool2D, Flatten, Dense<T>, Softmax>;

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

inline const char* layer_kind_name(std::size_t variant_index) {
  static const char* names[] = {"conv2d", "relu", "maxpool2d", "flatten", "dense", "softmax"};
  return names[variant_index];
}

/// Output shape of one layer for a per-sample input shape (batch axis excluded).
template <typename T>
Shape layer_output_shape(const Layer<T>& layer, const Shape& in) {
  return std::visit(overloaded{
                        [&](const Conv2D<T>& c) { return c.output_shape(in); },
                        [&](const ReLU&) { return in; },
                        [&](const MaxPool2D& p) { return p.output_shape(in); },
                        [&](const Flatten&) { return Shape{element_count(in)}; },
                        [&](const Dense<T>& d) {
                          if (in.size() != 1 || in[0] != d.in_units) {
                            throw ShapeError("dense: expects [" + std::to_string(d.in_units) + "], predecessor gives " +
                                             to_string(in));
                          }
                          return Shape{d.out_units};
                        },
                        [&](const Softmax&) {
                          if (in.size() != 1) throw ShapeError("softmax: expects a flat input, got " + to_string(in));
                          return in;
                        },
                    },
                    layer);
}

/// Gradients of every trainable tensor, in parameter order
/// (conv/dense layers in sequence, weights then bias).
template <typename T>
using Gradients = std::vector<BasicTensor<T>>;

/// Activations recorded by a forward pass, enough to run backward.
template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> inputs;  // input of each layer, batch axis included
  std::vector<PoolIndices> pools;      // one per maxpool layer, in order
  BasicTensor<T> logits;               // input of the final softmax
  BasicTensor<T> probabilities;
};

/// An ordered layer stack over a fixed per-sample input shape [H x W x C].
/// Construction validates that consecutive shapes compose, that the stack ends
/// in a softmax and that its width equals the number of class labels.
template <typename T>
class Model {
 public:
  Model(Shape input_shape, std::vector<Layer<T>> layers, std::vector<std::string> class_labels)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)), class_labels_(std::move(class_labels)) {
    validate();
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }
  const std::vector<std::string>& class_labels() const noexcept { return class_labels_; }
  std::size_t num_classes() const noexcept { return class_labels_.size(); }

  /// Per-sample output shape after each layer.
  const std::vector<Shape>& layer_shapes() const noexcept { return shapes_; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) {
      if (auto* c = std::get_if<Conv2D<T>>(&l)) total += c->parameter_count();
      if (auto* d = std::get_if<Dense<T>>(&l)) total += d->parameter_count();
    }
    return total;
  }

  /// Pointers to every trainable tensor in parameter order.
  std::vector<BasicTensor<T>*> parameters() {
    std::vector<BasicTensor<T>*> out;
    for (auto& l : layers_) {
      if (auto* c = std::get_if<Conv2D<T>>(&l)) {
        out.push_back(&c->weights);
        out.push_back(&c->bias);
      }
      if (auto* d = std::get_if<Dense<T>>(&l)) {
        out.push_back(&d->weights);
        out.push_back(&d->bias);
      }
    }
    return out;
  }

  std::vector<const BasicTensor<T>*> parameters() const {
    std::vector<const BasicTensor<T>*> out;
    for (auto* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
    return out;
  }

  /// Class probabilities [N x K] for a batch [N x H x W x C].
  BasicTensor<T> forward(const BasicTensor<T>& batch) const { return run(batch, nullptr); }

  ForwardTrace<T> forward_trace(const BasicTensor<T>& batch) const {
    ForwardTrace<T> trace;
    trace.probabilities = run(batch, &trace);
    return trace;
  }

  /// Backpropagates a gradient taken with respect to the logits (the input of
  /// the final softmax). Returns gradients in parameter order.
  Gradients<T> backward(const ForwardTrace<T>& trace, const BasicTensor<T>& logit_grad) const {
    if (logit_grad.shape() != trace.logits.shape()) {
      throw ShapeError("backward: logit gradient " + to_string(logit_grad.shape()) + " expected " +
                       to_string(trace.logits.shape()));
    }
    Gradients<T> grads;
    BasicTensor<T> g = logit_grad;
    std::size_t pool = trace.pools.size();
    // the final softmax is folded into logit_grad
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
      const BasicTensor<T>& x = trace.inputs[i];
      std::visit(overloaded{
                     [&](const Conv2D<T>& c) {
                       auto r = conv2d_backward(c, x, g);
                       grads.push_back(std::move(r.bias));
                       grads.push_back(std::move(r.weights));
                       g = std::move(r.input);
                     },
                     [&](const ReLU&) { g = relu_backward(x, g); },
                     [&](const MaxPool2D& p) { g = maxpool_backward(p, trace.pools[--pool], g); },
                     [&](const Flatten&) { g = std::move(g).reshape(x.shape()); },
                     [&](const Dense<T>& d) {
                       auto r = dense_backward(d, x, g);
                       grads.push_back(std::move(r.bias));
                       grads.push_back(std::move(r.weights));
                       g = std::move(r.input);
                     },
                     [&](const Softmax&) { throw ShapeError("backward: softmax only allowed as the final layer"); },
                 },
                 layers_[i]);
    }
    std::reverse(grads.begin(), grads.end());
    return grads;
  }

 private:
  void validate() {
    if (input_shape_.size() != 3) throw ShapeError("model: input shape must be [H x W x C], got " + to_string(input_shape_));
    if (layers_.empty() || !std::holds_alternative<Softmax>(layers_.back())) {
      throw ShapeError("model: the layer stack must end in softmax");
    }
    shapes_.clear();
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i + 1 < layers_.size() && std::holds_alternative<Softmax>(layers_[i])) {
        throw ShapeError("model: softmax only allowed as the final layer");
      }
      try {
        cur = layer_output_shape(layers_[i], cur);
      } catch (const ShapeError& e) {
        throw ShapeError("model: layer " + std::to_string(i) + " (" + layer_kind_name(layers_[i].index()) +
                         "): " + e.what());
      }
      shapes_.push_back(cur);
      if (auto* c = std::get_if<Conv2D<T>>(&layers_[i])) {
        if (c->weights.shape() != Shape{c->kernel_h, c->kernel_w, c->in_channels, c->filters} ||
            c->bias.shape() != Shape{c->filters}) {
          throw ShapeError("model: conv layer " + std::to_string(i) + " parameter shapes inconsistent");
        }
      }
      if (auto* d = std::get_if<Dense<T>>(&layers_[i])) {
        if (d->weights.shape() != Shape{d->in_units, d->out_units} || d->bias.shape() != Shape{d->out_units}) {
          throw ShapeError("model: dense layer " + std::to_string(i) + " parameter shapes inconsistent");
        }
      }
    }
    if (cur.size() != 1 || cur[0] != class_labels_.size()) {
      throw ShapeError("model: final output " + to_string(cur) + " does not match " +
                       std::to_string(class_labels_.size()) + " class labels");
    }
  }

  BasicTensor<T> run(const BasicTensor<T>& batch, ForwardTrace<T>* trace) const {
    if (batch.empty() || batch.rank() != 4) {
      throw ShapeError("forward: expected a non-empty [N x H x W x C] batch, got " + to_string(batch.shape()));
    }
    if (Shape{batch.dim(1), batch.dim(2), batch.dim(3)} != input_shape_) {
      throw ShapeError("forward: batch " + to_string(batch.shape()) + " does not match model input " +
                       to_string(input_shape_));
    }
    const std::size_t n = batch.dim(0);
    BasicTensor<T> x = batch;
    for (const auto& layer : layers_) {
      if (trace && !std::holds_alternative<Softmax>(layer)) trace->inputs.push_back(x);
      x = std::visit(overloaded{
                         [&](const Conv2D<T>& c) { return conv2d_forward(c, x); },
                         [&](const ReLU&) { return relu(x); },
                         [&](const MaxPool2D& p) {
                           auto r = maxpool_forward(p, x);
                           if (trace) trace->pools.push_back(std::move(r.indices));
                           return std::move(r.output);
                         },
                         [&](const Flatten&) { return std::move(x).reshape(Shape{n, x.size() / n}); },
                         [&](const Dense<T>& d) { return dense_forward(d, x); },
                         [&](const Softmax&) {
                           if (trace) trace->logits = x;
                           return softmax(x);
                         },
                     },
                     layer);
    }
    return x;
  }

  Shape input_shape_;
  std::vector<Layer<T>> layers_;
  std::vector<std::string> class_labels_;
  std::vector<Shape> shapes_;
};

/// Hyperparameters of the two-conv-layer classifier family.
struct ArchitectureConfig {
  Shape input_shape{kInputSide, kInputSide, 3};
  std::vector<std::size_t> conv_filters{24, 32};
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::size_t dense_units = 64;
  std::vector<std::string> class_labels = class_label_list();
};

/// He-uniform initialization: weights ~ U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)), zero bias.
template <typename T>
void he_uniform(BasicTensor<T>& weights, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& w : weights.data()) w = static_cast<T>(rng.uniform(-bound, bound));
}

/// Builds [Conv + ReLU -> MaxPool] per entry of conv_filters, then
/// Flatten -> Dense(dense_units) + ReLU -> Dense(classes) + Softmax.
template <typename T = float>
Model<T> build_model(const ArchitectureConfig& arch, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Layer<T>> layers;
  Shape cur = arch.input_shape;
  if (cur.size() != 3) throw ShapeError("build_model: input shape must be [H x W x C]");
  for (std::size_t filters : arch.conv_filters) {
    auto conv = Conv2D<T>::make(cur[2], filters, arch.kernel, arch.kernel, arch.stride, arch.padding);
    he_uniform(conv.weights, arch.kernel * arch.kernel * cur[2], rng);
    cur = conv.output_shape(cur);
    layers.emplace_back(std::move(conv));
    layers.emplace_back(ReLU{});
    MaxPool2D pool{arch.pool_window, arch.pool_window, arch.pool_stride};
    cur = pool.output_shape(cur);
    layers.emplace_back(pool);
  }
  layers.emplace_back(Flatten{});
  const std::size_t flat = element_count(cur);
  auto hidden = Dense<T>::make(flat, arch.dense_units);
  he_uniform(hidden.weights, flat, rng);
  layers.emplace_back(std::move(hidden));
  layers.emplace_back(ReLU{});
  auto head = Dense<T>::make(arch.dense_units, arch.class_labels.size());
  he_uniform(head.weights, arch.dense_units, rng);
  layers.emplace_back(std::move(head));
  layers.emplace_back(Softmax{});
  return Model<T>(arch.input_shape, std::move(layers), arch.class_labels);
}

/// The 300x300x3 classifier: Conv(24, 3x3) -> Pool(2x2) -> Conv(32, 3x3) -> Pool(2x2)
/// -> Dense(64) -> Dense(3) + softmax.
template <typename T = float>
Model<T> build_full_model(std::uint64_t seed) {
  return build_model<T>(ArchitectureConfig{}, seed);
}

/// Same topology at a smaller square input, for desk-scale experiments.
template <typename T = float>
Model<T> build_scaled_model(std::size_t side, std::uint64_t seed) {
  ArchitectureConfig arch;
  arch.input_shape = {side, side, 3};
  return build_model<T>(arch, seed);
}

/// Stacks per-sample [H x W x C] tensors into a batch.
template <typename T>
BasicTensor<T> stack_batch(const std::vector<BasicTensor<T>>& samples) {
  if (samples.empty()) throw ShapeError("stack_batch: no samples");
  const Shape& s = samples.front().shape();
  Shape shape{samples.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  std::vector<T> data;
  data.reserve(element_count(shape));
  for (const auto& t : samples) {
    if (t.shape() != s) throw ShapeError("stack_batch: sample " + to_string(t.shape()) + " vs " + to_string(s));
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace cxr
