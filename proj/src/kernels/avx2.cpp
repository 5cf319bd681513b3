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

// Compiled with -mavx2 -mfma; only called after a runtime CPU check.

#include <immintrin.h>

#include <cmath>

#include "h2ke/kernels.hpp"

namespace h2ke::kernels {

namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t kLanes = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg r) { _mm256_storeu_ps(p, r); }
  static Reg set1(float x) { return _mm256_set1_ps(x); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_ps(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_ps(a); }
  static float hsum(Reg r) {
    __m128 lo = _mm256_castps256_ps128(r);
    __m128 hi = _mm256_extractf128_ps(r, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t kLanes = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg r) { _mm256_storeu_pd(p, r); }
  static Reg set1(double x) { return _mm256_set1_pd(x); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_pd(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_pd(a); }
  static double hsum(Reg r) {
    __m128d lo = _mm256_castpd256_pd128(r);
    __m128d hi = _mm256_extractf128_pd(r, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// C[i, :] (+)= sum_p A(i, p) · B[p, :], with A(i, p) = a[i*ars + p*acs].
// Covers both A·B (ars=lda, acs=1) and Aᵀ·B (ars=1, acs=lda).
template <typename T>
void rows_times_matrix(std::size_t m, std::size_t n, std::size_t k, const T* a,
                       std::size_t ars, std::size_t acs, const T* b, std::size_t ldb,
                       T* c, std::size_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kLanes;
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * ldc;
    const T* ai = a + i * ars;
    std::size_t j = 0;
    for (; j + 4 * W <= n; j += 4 * W) {
      auto c0 = accumulate ? V::load(ci + j) : V::zero();
      auto c1 = accumulate ? V::load(ci + j + W) : V::zero();
      auto c2 = accumulate ? V::load(ci + j + 2 * W) : V::zero();
      auto c3 = accumulate ? V::load(ci + j + 3 * W) : V::zero();
      for (std::size_t p = 0; p < k; ++p) {
        const auto av = V::set1(ai[p * acs]);
        const T* bp = b + p * ldb + j;
        c0 = V::fmadd(av, V::load(bp), c0);
        c1 = V::fmadd(av, V::load(bp + W), c1);
        c2 = V::fmadd(av, V::load(bp + 2 * W), c2);
        c3 = V::fmadd(av, V::load(bp + 3 * W), c3);
      }
      V::store(ci + j, c0);
      V::store(ci + j + W, c1);
      V::store(ci + j + 2 * W, c2);
      V::store(ci + j + 3 * W, c3);
    }
    for (; j + W <= n; j += W) {
      auto c0 = accumulate ? V::load(ci + j) : V::zero();
      for (std::size_t p = 0; p < k; ++p) {
        c0 = V::fmadd(V::set1(ai[p * acs]), V::load(b + p * ldb + j), c0);
      }
      V::store(ci + j, c0);
    }
    for (; j < n; ++j) {
      T s = accumulate ? ci[j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += ai[p * acs] * b[p * ldb + j];
      ci[j] = s;
    }
  }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  rows_times_matrix(m, n, k, a, lda, 1, b, ldb, c, ldc, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  rows_times_matrix(m, n, k, a, 1, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kLanes;
  auto s0 = V::zero();
  auto s1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
    s1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), s1);
  }
  for (; i + W <= n; i += W) s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
  T s = V::hsum(V::add(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kLanes;
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * lda;
    T* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const T* b0 = b + j * ldb;
      const T* b1 = b0 + ldb;
      const T* b2 = b1 + ldb;
      const T* b3 = b2 + ldb;
      auto s0 = V::zero();
      auto s1 = V::zero();
      auto s2 = V::zero();
      auto s3 = V::zero();
      std::size_t p = 0;
      for (; p + W <= k; p += W) {
        const auto av = V::load(ai + p);
        s0 = V::fmadd(av, V::load(b0 + p), s0);
        s1 = V::fmadd(av, V::load(b1 + p), s1);
        s2 = V::fmadd(av, V::load(b2 + p), s2);
        s3 = V::fmadd(av, V::load(b3 + p), s3);
      }
      T r0 = V::hsum(s0), r1 = V::hsum(s1), r2 = V::hsum(s2), r3 = V::hsum(s3);
      for (; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      if (accumulate) {
        ci[j] += r0;
        ci[j + 1] += r1;
        ci[j + 2] += r2;
        ci[j + 3] += r3;
      } else {
        ci[j] = r0;
        ci[j + 1] = r1;
        ci[j + 2] = r2;
        ci[j + 3] = r3;
      }
    }
    for (; j < n; ++j) {
      const T s = dot(ai, b + j * ldb, k);
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kLanes;
  const auto av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void adam(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
          T eps, T bias1, T bias2) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kLanes;
  const auto b1 = V::set1(beta1), nb1 = V::set1(T(1) - beta1);
  const auto b2 = V::set1(beta2), nb2 = V::set1(T(1) - beta2);
  const auto c1 = V::set1(bias1), c2 = V::set1(bias2);
  const auto vlr = V::set1(lr), veps = V::set1(eps);
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(b1, V::load(m + i)), V::mul(nb1, g));
    const auto vi = V::add(V::mul(b2, V::load(v + i)), V::mul(V::mul(nb2, g), g));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto step = V::div(V::mul(vlr, V::div(mi, c1)),
                             V::add(V::sqrt(V::div(vi, c2)), veps));
    V::store(param + i, V::sub(V::load(param + i), step));
  }
  for (; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
    param[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

template <typename T>
constexpr KernelTable<T> make_table() {
  return KernelTable<T>{&gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>,
                        &dot<T>,     &axpy<T>,    &adam<T>};
}

}  // namespace

namespace detail {
const KernelTable<float>& avx2_float() {
  static constexpr auto kTable = make_table<float>();
  return kTable;
}
const KernelTable<double>& avx2_double() {
  static constexpr auto kTable = make_table<double>();
  return kTable;
}
}  // namespace detail

}  // namespace h2ke::kernels
