// Copyright 2026 The h2ke Authors.
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
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "h2ke/error.hpp"

namespace h2ke {

template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  std::size_t size() const { return data.size(); }
  T* row(std::size_t i) { return data.data() + i * cols; }
  const T* row(std::size_t i) const { return data.data() + i * cols; }
  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Ordered collection of named tensors. Order is the insertion order and is
// the serialization order.
template <typename T>
class ParamSet {
 public:
  int add(std::string name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw InvalidArgument("duplicate tensor '" + name + "'");
    const int id = static_cast<int>(tensors_.size());
    index_.emplace(name, id);
    names_.push_back(std::move(name));
    tensors_.emplace_back(rows, cols);
    return id;
  }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return tensors_[i]; }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  Matrix<T>& at(const std::string& name) {
    const int i = find(name);
    if (i < 0) throw InvalidArgument("no tensor named '" + name + "'");
    return tensors_[i];
  }
  const Matrix<T>& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  // Same names and shapes, zero-filled.
  ParamSet zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      out.add(names_[i], tensors_[i].rows, tensors_[i].cols);
    }
    return out;
  }

  bool same_layout(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (o.names_[i] != names_[i] || !o.tensors_[i].same_shape(tensors_[i])) return false;
    }
    return true;
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> tensors_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace h2ke
