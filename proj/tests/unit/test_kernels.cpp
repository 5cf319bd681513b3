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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "h2ke/error.hpp"
#include "h2ke/kernels.hpp"
#include "h2ke/rng.hpp"

using namespace h2ke;
using namespace h2ke::kernels;

namespace {

template <typename T>
std::vector<T> noise(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

// Relative to the magnitude of the reference entry plus an absolute floor
// scaled by the reduction length.
template <typename T>
double tolerance(std::size_t k) {
  return (sizeof(T) == 4 ? 2e-6 : 1e-14) * static_cast<double>(k + 1);
}

template <typename T>
void check_close(const std::vector<T>& ref, const std::vector<T>& got, double tol) {
  REQUIRE(ref.size() == got.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double err = std::abs(static_cast<double>(ref[i]) - static_cast<double>(got[i])) /
                       (1.0 + std::abs(static_cast<double>(ref[i])));
    worst = std::max(worst, err);
  }
  INFO("worst error " << worst << " tolerance " << tol);
  CHECK(worst <= tol);
}

struct Shape {
  std::size_t m, n, k;
};

const Shape kShapes[] = {{1, 1, 1},   {3, 5, 7},   {4, 8, 16},   {7, 33, 9},
                         {17, 31, 65}, {64, 64, 64}, {5, 129, 3}, {33, 2, 100}};

template <typename T>
void gemm_equivalence(const KernelTable<T>& ref, const KernelTable<T>& simd) {
  Rng rng(42);
  for (const auto& s : kShapes) {
    for (bool acc : {false, true}) {
      CAPTURE(s.m);
      CAPTURE(s.n);
      CAPTURE(s.k);
      CAPTURE(acc);
      const std::size_t pad = 3;  // leading dimensions wider than the logical width
      {
        const auto a = noise<T>(rng, s.m * (s.k + pad));
        const auto b = noise<T>(rng, s.k * (s.n + pad));
        auto c1 = noise<T>(rng, s.m * (s.n + pad));
        auto c2 = c1;
        ref.gemm_nn(s.m, s.n, s.k, a.data(), s.k + pad, b.data(), s.n + pad, c1.data(),
                    s.n + pad, acc);
        simd.gemm_nn(s.m, s.n, s.k, a.data(), s.k + pad, b.data(), s.n + pad, c2.data(),
                     s.n + pad, acc);
        check_close(c1, c2, tolerance<T>(s.k));
      }
      {
        const auto a = noise<T>(rng, s.m * (s.k + pad));
        const auto b = noise<T>(rng, s.n * (s.k + pad));
        auto c1 = noise<T>(rng, s.m * (s.n + pad));
        auto c2 = c1;
        ref.gemm_nt(s.m, s.n, s.k, a.data(), s.k + pad, b.data(), s.k + pad, c1.data(),
                    s.n + pad, acc);
        simd.gemm_nt(s.m, s.n, s.k, a.data(), s.k + pad, b.data(), s.k + pad, c2.data(),
                     s.n + pad, acc);
        check_close(c1, c2, tolerance<T>(s.k));
      }
      {
        const auto a = noise<T>(rng, s.k * (s.m + pad));
        const auto b = noise<T>(rng, s.k * (s.n + pad));
        auto c1 = noise<T>(rng, s.m * (s.n + pad));
        auto c2 = c1;
        ref.gemm_tn(s.m, s.n, s.k, a.data(), s.m + pad, b.data(), s.n + pad, c1.data(),
                    s.n + pad, acc);
        simd.gemm_tn(s.m, s.n, s.k, a.data(), s.m + pad, b.data(), s.n + pad, c2.data(),
                     s.n + pad, acc);
        check_close(c1, c2, tolerance<T>(s.k));
      }
    }
  }
}

template <typename T>
void vector_equivalence(const KernelTable<T>& ref, const KernelTable<T>& simd) {
  Rng rng(7);
  for (std::size_t n : {0u, 1u, 3u, 4u, 8u, 15u, 16u, 31u, 257u, 1000u}) {
    CAPTURE(n);
    const auto x = noise<T>(rng, n);
    const auto y = noise<T>(rng, n);
    const double d1 = ref.dot(x.data(), y.data(), n);
    const double d2 = simd.dot(x.data(), y.data(), n);
    CHECK(std::abs(d1 - d2) <= tolerance<T>(n));

    auto y1 = y, y2 = y;
    ref.axpy(T(0.37), x.data(), y1.data(), n);
    simd.axpy(T(0.37), x.data(), y2.data(), n);
    check_close(y1, y2, tolerance<T>(1));

    auto p1 = noise<T>(rng, n), m1 = noise<T>(rng, n), v1 = noise<T>(rng, n);
    for (auto& v : v1) v = std::abs(v);
    auto p2 = p1, m2 = m1, v2 = v1;
    const auto g = noise<T>(rng, n);
    ref.adam(p1.data(), g.data(), m1.data(), v1.data(), n, T(1e-3), T(0.9), T(0.98), T(1e-9),
             T(0.1), T(0.02));
    simd.adam(p2.data(), g.data(), m2.data(), v2.data(), n, T(1e-3), T(0.9), T(0.98), T(1e-9),
              T(0.1), T(0.02));
    check_close(p1, p2, tolerance<T>(4));
    check_close(m1, m2, tolerance<T>(1));
    check_close(v1, v2, tolerance<T>(1));
  }
}

}  // namespace

TEST_CASE("scalar gemm agrees with a naive triple loop") {
  Rng rng(3);
  const std::size_t m = 5, n = 6, k = 7;
  const auto a = noise<double>(rng, m * k);
  const auto b = noise<double>(rng, k * n);
  std::vector<double> c(m * n), expect(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) expect[i * n + j] += a[i * k + p] * b[p * n + j];
  scalar<double>().gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
  check_close(expect, c, 1e-15);

  // Aᵀ stored as [k×m] and Bᵀ stored as [n×k] must give the same product.
  std::vector<double> at(k * m), bt(n * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  scalar<double>().gemm_tn(m, n, k, at.data(), m, b.data(), n, c.data(), n, false);
  check_close(expect, c, 1e-15);
  scalar<double>().gemm_nt(m, n, k, a.data(), k, bt.data(), k, c.data(), n, false);
  check_close(expect, c, 1e-15);
}

TEST_CASE("scalar adam matches the closed-form first step") {
  // With m = v = 0 and bias corrections for step 1, the update is lr·sign(g).
  double p = 1.0, m = 0.0, v = 0.0;
  const double g = -0.25;
  scalar<double>().adam(&p, &g, &m, &v, 1, 0.01, 0.9, 0.98, 0.0, 0.1, 0.02);
  CHECK(p == doctest::Approx(1.01).epsilon(1e-12));
  CHECK(m == doctest::Approx(-0.025));
  CHECK(v == doctest::Approx(0.02 * 0.0625));
}

TEST_CASE("AVX2 kernels match the scalar reference") {
  if (avx2<float>() == nullptr) {
    MESSAGE("AVX2 variant unavailable on this machine; equivalence not exercised");
    return;
  }
  gemm_equivalence(scalar<float>(), *avx2<float>());
  gemm_equivalence(scalar<double>(), *avx2<double>());
  vector_equivalence(scalar<float>(), *avx2<float>());
  vector_equivalence(scalar<double>(), *avx2<double>());
}

TEST_CASE("dispatch can be forced to the scalar path") {
  const Isa before = active_isa();
  set_active_isa(Isa::kScalar);
  CHECK(&active<float>() == &scalar<float>());
  CHECK(&active<double>() == &scalar<double>());
  CHECK(isa_name(Isa::kScalar) == "scalar");
  if (detected_isa() == Isa::kAvx2) {
    set_active_isa(Isa::kAvx2);
    CHECK(&active<float>() == avx2<float>());
  } else {
    CHECK_THROWS_AS(set_active_isa(Isa::kAvx2), InvalidArgument);
  }
  set_active_isa(before);
}
