// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "faceguard/common.hpp"

namespace faceguard {

// Dense row-major tensor of arbitrary rank. Images and activations use
// (N, C, H, W); embeddings use (N, D). Plain value semantics throughout.
template <Scalar T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), T(0)) {}

  Tensor(std::initializer_list<std::size_t> shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor data size does not match shape");
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // (n, c, h, w) accessors for rank-4 tensors.
  T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  T& at2(std::size_t n, std::size_t d) { return data_[n * shape_[1] + d]; }
  const T& at2(std::size_t n, std::size_t d) const { return data_[n * shape_[1] + d]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  void reshape(std::vector<std::size_t> shape) {
    if (count(shape) != data_.size()) {
      throw ShapeError("reshape changes element count: " + shape_str(shape_) + " -> " +
                       shape_str(shape));
    }
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <Scalar T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + Tensor<T>::shape_str(a.shape()) +
                     " vs " + Tensor<T>::shape_str(b.shape()));
  }
}

// y += alpha * x
template <Scalar T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  check_same_shape(x, y, "axpy");
  const T* xs = x.data();
  T* ys = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) ys[i] += alpha * xs[i];
}

template <Scalar T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "dot");
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <Scalar T>
T l1_norm(const Tensor<T>& a) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i]);
  return acc;
}

template <Scalar T>
T l2_norm(const Tensor<T>& a) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
  return std::sqrt(acc);
}

template <Scalar T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

template <Scalar T>
bool all_finite(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

}  // namespace faceguard
