#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "afp/errors.hpp"

namespace afp {

/// Dense row-major tensor with up to four extents.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(count(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != count(shape_))
      throw UsageError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string());
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 3-D accessors (C×H×W) are the common case in this codebase.
  T& at(int c, int i, int j) { return data_[(std::size_t(c) * shape_[1] + i) * shape_[2] + j]; }
  const T& at(int c, int i, int j) const {
    return data_[(std::size_t(c) * shape_[1] + i) * shape_[2] + j];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
  }

 private:
  void check_shape() const {
    if (shape_.empty() || shape_.size() > 4)
      throw UsageError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
    for (int e : shape_)
      if (e <= 0) throw UsageError("tensor extents must be positive: " + shape_string());
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_)
    if (!(v - v == T(0))) return false;
  return true;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace afp
