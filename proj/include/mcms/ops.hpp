#pragma once

// Value-level forms of the tensor operations. Each one runs the
// differentiable op on a non-recording tape, so contracts and numerics are
// shared with training.

#include "mcms/autodiff.hpp"

#include <optional>
#include <vector>

namespace mcms {

namespace detail {
template <class T> Var<T> wrap(const Tensor<T> &x) {
  return Tape<T>::constant(x);
}
} // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &weight,
                 const std::optional<Tensor<T>> &bias,
                 const ConvOptions &opt = {}) {
  const Var<T> vx = detail::wrap(x), vw = detail::wrap(weight);
  if (bias) {
    const Var<T> vb = detail::wrap(*bias);
    return conv2d(vx, vw, &vb, opt).value();
  }
  return conv2d(vx, vw, static_cast<const Var<T> *>(nullptr), opt).value();
}

template <class T> Tensor<T> avgpool2d(const Tensor<T> &x, std::size_t k) {
  return avgpool2d(detail::wrap(x), k).value();
}

template <class T> Tensor<T> upsample2x(const Tensor<T> &x) {
  return upsample2x(detail::wrap(x)).value();
}

template <class T> Tensor<T> activation(const Tensor<T> &x) {
  return activation(detail::wrap(x)).value();
}

template <class T> Tensor<T> reshape(const Tensor<T> &x, const Shape &s) {
  return reshape(detail::wrap(x), s).value();
}

template <class T>
std::vector<Tensor<T>> chunk(const Tensor<T> &x, std::size_t groups) {
  std::vector<Tensor<T>> out;
  for (const auto &v : chunk(detail::wrap(x), groups))
    out.push_back(v.value());
  return out;
}

template <class T> Tensor<T> concat(const std::vector<Tensor<T>> &parts) {
  std::vector<Var<T>> vs;
  for (const auto &p : parts)
    vs.push_back(detail::wrap(p));
  return concat(vs).value();
}

template <class T>
Matrix<T> to_matrix(const Tensor<T> &x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.size())
    shape_fail("to_matrix: element count " + std::to_string(x.size()) +
               " cannot become " + std::to_string(rows) + "x" +
               std::to_string(cols));
  return Matrix<T>(rows, cols, x.storage());
}

template <class T> Tensor<T> from_matrix(const Matrix<T> &m, const Shape &s) {
  if (s.size() != m.size())
    shape_fail("from_matrix: element count mismatch");
  return Tensor<T>(s, m.storage());
}

template <class T> Matrix<T> matmul(const Matrix<T> &a, const Matrix<T> &b) {
  return Matrix<T>::from_tensor(
      matmul(detail::wrap(a.as_tensor()), detail::wrap(b.as_tensor())).value());
}

template <class T> Matrix<T> transpose(const Matrix<T> &a) {
  return Matrix<T>::from_tensor(transpose(detail::wrap(a.as_tensor())).value());
}

// Row-normalized softmax with max subtraction.
template <class T> Matrix<T> softmax(const Matrix<T> &a) {
  return Matrix<T>::from_tensor(
      softmax_rows(detail::wrap(a.as_tensor())).value());
}

} // namespace mcms
