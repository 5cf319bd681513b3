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

#include <cmath>
#include <cstring>

#include "h2ke/kernels.hpp"

namespace h2ke::kernels {

namespace {

template <typename T>
void clear_or_keep(std::size_t m, std::size_t n, T* c, std::size_t ldc, bool accumulate) {
  if (accumulate) return;
  for (std::size_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, n * sizeof(T));
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  clear_or_keep(m, n, c, ldc, accumulate);
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * lda + p];
      const T* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * lda + p] * b[j * ldb + p];
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + s : s;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  clear_or_keep(m, n, c, ldc, accumulate);
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = a[p * lda + i];
      if (api == T(0)) continue;
      T* ci = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void adam(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
          T eps, T bias1, T bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
    const T mhat = m[i] / bias1;
    const T vhat = v[i] / bias2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
constexpr KernelTable<T> make_table() {
  return KernelTable<T>{&gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>,
                        &dot<T>,     &axpy<T>,    &adam<T>};
}

}  // namespace

template <>
const KernelTable<float>& scalar<float>() {
  static constexpr auto kTable = make_table<float>();
  return kTable;
}

template <>
const KernelTable<double>& scalar<double>() {
  static constexpr auto kTable = make_table<double>();
  return kTable;
}

}  // namespace h2ke::kernels
