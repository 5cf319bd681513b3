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

#include <cstddef>
#include <string_view>

// Dense inner loops of the transformer. Every routine has a portable scalar
// reference implementation; an AVX2/FMA variant is compiled separately on
// x86-64 and selected at runtime when the CPU supports it.
//
// Matrices are row-major with explicit leading dimensions.

namespace h2ke::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
  // C[m×n] (+)= A[m×k] · B[k×n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate);
  // C[m×n] (+)= A[m×k] · B[n×k]ᵀ
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate);
  // C[m×n] (+)= A[k×m]ᵀ · B[k×n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate);
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += alpha · x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // Bias-corrected Adam step over n contiguous parameters.
  void (*adam)(T* param, const T* grad, T* m, T* v, std::size_t n, T lr,
               T beta1, T beta2, T eps, T bias1, T bias2);
};

template <typename T>
const KernelTable<T>& scalar();

// nullptr when the variant was not compiled or the CPU lacks the features.
template <typename T>
const KernelTable<T>* avx2();

Isa detected_isa();
Isa active_isa();
// Overrides dispatch (tests, H2KE_ISA=scalar). Requesting an unavailable
// variant throws.
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& active();

}  // namespace h2ke::kernels
