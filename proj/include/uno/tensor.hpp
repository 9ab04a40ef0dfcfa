#pragma once

// Dense row-major real and complex arrays.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace uno {

using cdouble = std::complex<double>;

/// Thrown when operand extents do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf, or an iterative method fails.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
}

/// Row-major strides for `shape`.
inline Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(uno::numel(shape_), T{});
  }
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != uno::numel(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }
  BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(uno::numel(shape_), fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <class... I>
  T& at(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... I>
  const T& at(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw ShapeError("index rank mismatch for shape " + to_string(shape_));
    std::size_t off = 0, k = 0;
    for (auto i : idx) {
      if (i >= shape_[k]) throw std::out_of_range("tensor index out of range");
      off = off * shape_[k++] + i;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// 64-bit real tensor.
using Tensor = BasicTensor<double>;
/// Complex tensor; storage is interleaved (re, im) pairs.
using ComplexTensor = BasicTensor<cdouble>;

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}
inline bool all_finite(std::span<const cdouble> v) {
  return std::all_of(v.begin(), v.end(), [](const cdouble& x) {
    return std::isfinite(x.real()) && std::isfinite(x.imag());
  });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Real inner product of complex vectors viewed as pairs of reals.
inline double dot(std::span<const cdouble> a, std::span<const cdouble> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace uno
