#pragma once

#include "mcms/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mcms {

// (batch, channel, height, width). Every component is at least 1.
struct Shape {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape &, const Shape &) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Dense rank-4 array, row-major (n, c, h, w).
template <class T> class Tensor {
public:
  using value_type = T;

  Tensor() : shape_{}, data_(1, T(0)) {}

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    validate(shape);
    data_.assign(shape.size(), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    validate(shape);
    if (data_.size() != shape.size())
      shape_fail("tensor data length " + std::to_string(data_.size()) +
                 " does not match shape " + shape.str());
  }

  const Shape &shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T> &storage() { return data_; }
  const std::vector<T> &storage() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t in, std::size_t ic, std::size_t iy,
                     std::size_t ix) const {
    return ((in * shape_.c + ic) * shape_.h + iy) * shape_.w + ix;
  }
  T &at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) {
    return data_[offset(in, ic, iy, ix)];
  }
  const T &at(std::size_t in, std::size_t ic, std::size_t iy,
              std::size_t ix) const {
    return data_[offset(in, ic, iy, ix)];
  }

  T *plane(std::size_t in, std::size_t ic) {
    return data_.data() + (in * shape_.c + ic) * shape_.plane();
  }
  const T *plane(std::size_t in, std::size_t ic) const {
    return data_.data() + (in * shape_.c + ic) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <class U> Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor &a, const Tensor &b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  static void validate(const Shape &s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
      shape_fail("tensor shape components must be >= 1, got " + s.str());
  }

  Shape shape_;
  std::vector<T> data_;
};

// Row-major 2-D array used for the attention algebra.
template <class T> class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
      shape_fail("matrix data length does not match " + std::to_string(rows) +
                 "x" + std::to_string(cols));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  T &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T &operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::vector<T> &storage() { return data_; }
  const std::vector<T> &storage() const { return data_; }

  // 1x1xRxC view, the form matrices take on the gradient tape.
  Tensor<T> as_tensor() const { return Tensor<T>({1, 1, rows_, cols_}, data_); }
  static Matrix from_tensor(const Tensor<T> &t) {
    return Matrix(t.n() * t.c() * t.h(), t.w(), t.storage());
  }

  friend bool operator==(const Matrix &, const Matrix &) = default;

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

template <class T> T max_abs_diff(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.shape() != b.shape())
    shape_fail("max_abs_diff: shape mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

// Extended-precision accumulator: loss reductions feed finite-difference
// checks, where summation error divided by eps dominates the noise.
template <class T> double sum_of(const Tensor<T> &a) {
  long double s = 0.0L;
  for (T v : a.values())
    s += static_cast<long double>(v);
  return static_cast<double>(s);
}

template <class T> double mean_of(const Tensor<T> &a) {
  return sum_of(a) / static_cast<double>(a.size());
}

template <class T> double squared_norm(const Tensor<T> &a) {
  double s = 0.0;
  for (T v : a.values())
    s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

} // namespace mcms
