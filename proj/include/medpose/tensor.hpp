// Copyright 2026 The medpose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "medpose/error.hpp"

namespace medpose {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major n-dimensional array. Value semantics; copies are deep.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      fail(ErrorKind::kShape, "tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same data viewed under a new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  /// Contiguous slice along the leading axis: element `index` of a [B, ...] tensor.
  BasicTensor slice(std::size_t index) const;

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
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
BasicTensor<T> BasicTensor<T>::slice(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) {
    fail(ErrorKind::kShape, "slice index out of range for shape " + shape_string(shape_));
  }
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t stride = shape_numel(inner);
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(index * stride),
                     data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
  return BasicTensor(std::move(inner), std::move(out));
}

/// Stack equally-shaped tensors along a new leading axis.
template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) fail(ErrorKind::kShape, "stack of zero tensors");
  Shape shape = parts[0].shape();
  std::vector<T> out;
  out.reserve(parts.size() * parts[0].numel());
  for (const auto& p : parts) {
    if (p.shape() != shape) {
      fail(ErrorKind::kShape, "stack: shape " + shape_string(p.shape()) + " vs " +
                                  shape_string(shape));
    }
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  shape.insert(shape.begin(), parts.size());
  return BasicTensor<T>(std::move(shape), std::move(out));
}

void require_shape(const Shape& actual, const Shape& expected, const char* what);

}  // namespace medpose
