#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cxrnet/dataset.hpp"
#include "cxrnet/error.hpp"
#include "cxrnet/model.hpp"
#include "cxrnet/parallel.hpp"
#include "cxrnet/random.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr {

inline constexpr double kLogEpsilon = 1e-12;

namespace detail {
template <typename T>
void check_loss_inputs(const BasicTensor<T>& probs, std::span<const std::size_t> labels, const char* who) {
  if (probs.rank() != 2) throw ShapeError(std::string(who) + ": expected [N x K] probabilities, got " + to_string(probs.shape()));
  if (labels.size() != probs.dim(0)) {
    throw ShapeError(std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(probs.dim(0)) + " rows");
  }
  for (auto l : labels) {
    if (l >= probs.dim(1)) {
      throw ValueRangeError(std::string(who) + ": label " + std::to_string(l) + " out of range for " +
                            std::to_string(probs.dim(1)) + " classes");
    }
  }
}
}  // namespace detail

/// Mean over the batch of -log(max(p[label], 1e-12)).
template <typename T>
double cross_entropy(const BasicTensor<T>& probs, std::span<const std::size_t> labels) {
  detail::check_loss_inputs(probs, labels, "cross_entropy");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    total -= std::log(std::max(static_cast<double>(probs[r * k + labels[r]]), kLogEpsilon));
  }
  return total / static_cast<double>(n);
}

/// Gradient of cross_entropy(softmax(z)) with respect to the logits z:
/// (p - onehot(label)) / N.
template <typename T>
BasicTensor<T> loss_backward(const BasicTensor<T>& probs, std::span<const std::size_t> labels) {
  detail::check_loss_inputs(probs, labels, "loss_backward");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  BasicTensor<T> g = probs;
  for (std::size_t r = 0; r < n; ++r) g[r * k + labels[r]] -= T{1};
  const T inv = T{1} / static_cast<T>(n);
  for (auto& v : g.data()) v *= inv;
  return g;
}

enum class OptimizerKind { sgd_momentum, adam };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;

  void validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train config: learning_rate must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("train config: validation_fraction must be in [0, 1)");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train config: momentum must be in [0, 1)");
  }
};

/// Per-parameter optimizer memory: velocity for SGD, first/second moments for Adam.
template <typename T>
struct OptimizerState {
  std::vector<BasicTensor<T>> first;
  std::vector<BasicTensor<T>> second;
  std::uint64_t steps = 0;
};

/// One update of every parameter tensor in place.
///   SGD:  v = momentum * v + g;  p -= lr * v
///   Adam: m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2;
///         p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
void optimizer_step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>> grads,
                    OptimizerState<T>& state, const TrainConfig& config) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(params.size()) + " parameters vs " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.emplace_back(p->shape());
      if (config.optimizer == OptimizerKind::adam) state.second.emplace_back(p->shape());
    }
  }
  if (state.first.size() != params.size()) throw ShapeError("optimizer_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.first[i].shape() != grads[i].shape()) {
      throw ShapeError("optimizer_step: parameter " + std::to_string(i) + " " + to_string(params[i]->shape()) +
                       " vs gradient " + to_string(grads[i].shape()));
    }
  }
  ++state.steps;
  const double lr = config.learning_rate;
  if (config.optimizer == OptimizerKind::sgd_momentum) {
    const T mu = static_cast<T>(config.momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->data();
      auto g = grads[i].data();
      auto v = state.first[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = mu * v[j] + g[j];
        p[j] -= static_cast<T>(lr) * v[j];
      }
    }
    return;
  }
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = state.first[i].data();
    auto v = state.second[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * gj * gj);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = static_cast<T>(p[j] - lr * mhat / (std::sqrt(vhat) + config.adam_epsilon));
    }
  }
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  double seconds = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  /// CSV with header epoch,train_loss,train_acc,val_loss,val_acc,seconds.
  /// Validation cells are empty when no validation split was used.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
    for (const auto& r : epochs) {
      os << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ',';
      if (r.val_loss) os << *r.val_loss;
      os << ',';
      if (r.val_accuracy) os << *r.val_accuracy;
      os << ',' << r.seconds << '\n';
    }
    return os.str();
  }
};

struct BatchResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

namespace detail {

template <typename T>
BasicTensor<T> gather_batch(const SampleSource& data, std::span<const std::size_t> idx,
                            std::vector<std::size_t>& labels) {
  std::vector<BasicTensor<T>> samples(idx.size());
  labels.resize(idx.size());
  std::vector<std::string> errors(idx.size());
  parallel_for(idx.size(), 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      try {
        if constexpr (std::is_same_v<T, float>) {
          samples[i] = data.pixels(idx[i]);
        } else {
          samples[i] = data.pixels(idx[i]).template cast<T>();
        }
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw DatasetError(DatasetError::Kind::io, e);
  }
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.label(idx[i]);
  return stack_batch(samples);
}

template <typename T>
std::size_t count_correct(const BasicTensor<T>& probs, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  const std::size_t k = probs.dim(1);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (argmax(std::span<const T>(probs.raw() + r * k, k)) == labels[r]) ++correct;
  }
  return correct;
}

}  // namespace detail

/// Forward + backward + update on one mini-batch.
template <typename T>
BatchResult train_step(Model<T>& model, const BasicTensor<T>& batch, std::span<const std::size_t> labels,
                       OptimizerState<T>& state, const TrainConfig& config) {
  auto trace = model.forward_trace(batch);
  BatchResult r{cross_entropy(trace.probabilities, labels), detail::count_correct(trace.probabilities, labels)};
  if (!std::isfinite(r.loss)) throw DivergenceError("training loss became non-finite");
  const auto grads = model.backward(trace, loss_backward(trace.probabilities, labels));
  auto params = model.parameters();
  optimizer_step<T>(params, grads, state, config);
  for (auto* p : params) {
    if (!all_finite(*p)) throw DivergenceError("a parameter became NaN/Inf after an optimizer step");
  }
  return r;
}

/// Mean loss and accuracy of the model over the given examples.
template <typename T>
BatchResult evaluate_loss(const Model<T>& model, const SampleSource& data, std::span<const std::size_t> indices,
                          std::size_t batch_size) {
  BatchResult total;
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto idx = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto batch = detail::gather_batch<T>(data, idx, labels);
    const auto probs = model.forward(batch);
    total.loss += cross_entropy(probs, labels) * static_cast<double>(idx.size());
    total.correct += detail::count_correct(probs, labels);
  }
  if (!indices.empty()) total.loss /= static_cast<double>(indices.size());
  return total;
}

/// Called after every epoch; return false to stop early.
template <typename T>
using EpochCallback = std::function<bool(const Model<T>&, const EpochRecord&)>;

/// Mini-batch training. A validation subset (validation_fraction of the data,
/// chosen with the config seed) is held out for the history's val columns.
/// Each epoch reshuffles the remaining examples with a seed derived from
/// (config.seed, epoch); the last partial batch is kept.
template <typename T>
TrainHistory fit(Model<T>& model, const SampleSource& data, const TrainConfig& config,
                 const EpochCallback<T>& on_epoch = {}) {
  config.validate();
  if (data.size() == 0) throw DatasetError(DatasetError::Kind::empty_dataset, "fit: training set is empty");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(config.seed, 0xa11));
  split_rng.shuffle(std::span(order));
  const auto val_count = static_cast<std::size_t>(std::round(config.validation_fraction * static_cast<double>(data.size())));
  if (val_count >= data.size()) throw ConfigError("fit: validation split leaves no training data");
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());
  std::sort(train.begin(), train.end());

  OptimizerState<T> state;
  TrainHistory history;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> perm = train;
    Rng rng(derive_seed(config.seed, epoch));
    rng.shuffle(std::span(perm));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const auto idx = std::span<const std::size_t>(perm).subspan(start, std::min(config.batch_size, perm.size() - start));
      const auto batch = detail::gather_batch<T>(data, idx, labels);
      const auto r = train_step(model, batch, labels, state, config);
      loss_sum += r.loss * static_cast<double>(idx.size());
      correct += r.correct;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(perm.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(perm.size());
    if (!val.empty()) {
      const auto v = evaluate_loss(model, data, val, config.batch_size);
      rec.val_loss = v.loss;
      rec.val_accuracy = static_cast<double>(v.correct) / static_cast<double>(val.size());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.epochs.push_back(rec);
    if (on_epoch && !on_epoch(model, rec)) break;
  }
  return history;
}

/// Predicted class index for every example, in order.
template <typename T>
std::vector<std::size_t> predict_all(const Model<T>& model, const SampleSource& data, std::size_t batch_size = 32) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    const auto idx = std::span<const std::size_t>(all).subspan(start, std::min(batch_size, all.size() - start));
    const auto probs = model.forward(detail::gather_batch<T>(data, idx, labels));
    const std::size_t k = probs.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(argmax(std::span<const T>(probs.raw() + r * k, k)));
  }
  return out;
}

}  // namespace cxr
