// Copyright 2026 The ecg2cine Authors
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

#ifndef ECG2CINE_CORE_ARRAY_HPP_
#define ECG2CINE_CORE_ARRAY_HPP_

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ecg2cine/core/errors.hpp"

namespace ecg2cine::core {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major n-d array. Plain value type; copies are deep.
template <typename T>
class Array {
 public:
  Array() = default;

  explicit Array(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T{}) {}

  Array(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
      throw ShapeError("array data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Array zeros(Shape shape) { return Array(std::move(shape)); }

  static Array full(Shape shape, T v) {
    Array a(std::move(shape));
    std::fill(a.data_.begin(), a.data_.end(), v);
    return a;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(std::initializer_list<int64_t> idx) {
    return data_[static_cast<size_t>(flat_index(idx))];
  }
  const T& at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(flat_index(idx))];
  }

  // Same data, new shape; element count must match.
  Array reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    return Array(std::move(shape), data_);
  }

  template <typename U>
  Array<U> cast() const {
    Array<U> out(shape_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }

 private:
  int64_t flat_index(std::initializer_list<int64_t> idx) const {
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      flat = flat * shape_[k] + i;
      ++k;
    }
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

using ArrayD = Array<double>;
using ArrayF = Array<float>;
using ArrayI = Array<int64_t>;

template <typename T>
void check_shape(const Array<T>& a, const Shape& expect, const char* what) {
  if (a.shape() != expect) {
    throw ShapeError(std::string(what) + ": expected " + shape_str(expect) +
                     ", got " + shape_str(a.shape()));
  }
}

}  // namespace ecg2cine::core

#endif  // ECG2CINE_CORE_ARRAY_HPP_
