#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cxrnet/error.hpp"
#include "cxrnet/parallel.hpp"

namespace cxr {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major N-dimensional array. The last axis varies fastest.
///
/// A default-constructed tensor is empty (rank 0, no elements); every other
/// tensor has at least one axis and every dimension is >= 1.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                       " elements, got " + std::to_string(data_.size()));
    }
  }

  /// Rank-1 tensor from a list of values.
  BasicTensor(std::initializer_list<T> values) : BasicTensor(Shape{values.size()}, std::vector<T>(values)) {}

  /// Rank-2 tensor from nested rows.
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("tensor: ragged matrix rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor(Shape{r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  /// Same elements in the same order under a new shape.
  BasicTensor reshape(Shape new_shape) const& {
    check_reshape(new_shape);
    return BasicTensor(std::move(new_shape), data_);
  }
  BasicTensor reshape(Shape new_shape) && {
    check_reshape(new_shape);
    return BasicTensor(std::move(new_shape), std::move(data_));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: shape must have at least one axis");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + to_string(shape));
    }
  }

  void check_reshape(const Shape& new_shape) const {
    validate_shape(new_shape);
    if (element_count(new_shape) != data_.size()) {
      throw ShapeError("reshape: element count mismatch " + to_string(shape_) + " -> " + to_string(new_shape));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("tensor: index rank mismatch for " + to_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      if (i >= shape_[axis]) throw ShapeError("tensor: index out of range for " + to_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

// C[m x n] (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// Row-partitioned across threads; every output element is reduced in the same
// order regardless of worker count.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  const std::size_t work = m * n * k;
  const std::size_t min_rows = work > (1u << 16) ? std::max<std::size_t>(1, (1u << 16) / std::max<std::size_t>(1, n * k)) : m;
  parallel_for(m, min_rows, [&](std::size_t row_begin, std::size_t row_end) {
    std::vector<T> arow(trans_a ? k : 0);
    for (std::size_t i = row_begin; i < row_end; ++i) {
      T* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, T{});
      const T* ai = a + i * k;
      if (trans_a) {
        for (std::size_t p = 0; p < k; ++p) arow[p] = a[p * m + i];
        ai = arow.data();
      }
      if (trans_b) {
        // b is stored n x k: each output is a unit-stride dot product
        for (std::size_t j = 0; j < n; ++j) {
          const T* bj = b + j * k;
          T acc{};
          for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
          crow[j] += acc;
        }
        continue;
      }
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = ai[p];
        if (aip == T{}) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  });
}

}  // namespace detail

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  BasicTensor<T> c(Shape{a.dim(0), b.dim(1)});
  detail::gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), c.raw(), false);
  return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  BasicTensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

enum class ElementwiseOp { add, sub, mul };

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  BasicTensor<T> out = a;
  auto o = out.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (op) {
      case ElementwiseOp::add: o[i] += y[i]; break;
      case ElementwiseOp::sub: o[i] -= y[i]; break;
      case ElementwiseOp::mul: o[i] *= y[i]; break;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(ElementwiseOp::add, a, b);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(ElementwiseOp::sub, a, b);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(ElementwiseOp::mul, a, b);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

/// Index of the largest element; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw EmptyTensorError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
std::size_t argmax(const BasicTensor<T>& t) {
  if (t.empty()) throw EmptyTensorError("argmax: empty tensor");
  if (t.rank() != 1) throw ShapeError("argmax: expected rank 1, got " + to_string(t.shape()));
  return argmax(t.data());
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return v - v == T{}; });
}

}  // namespace cxr
