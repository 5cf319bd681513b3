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

#include <atomic>
#include <cstdlib>
#include <string>

#include "h2ke/error.hpp"
#include "h2ke/kernels.hpp"

namespace h2ke::kernels {

#if defined(H2KE_HAVE_AVX2)
namespace detail {
const KernelTable<float>& avx2_float();
const KernelTable<double>& avx2_double();
}  // namespace detail
#endif

namespace {

bool cpu_has_avx2() {
#if defined(H2KE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("H2KE_ISA")) {
    if (std::string(env) == "scalar") return Isa::kScalar;
  }
  return detected_isa();
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

Isa detected_isa() {
  static const bool kAvx2 = cpu_has_avx2();
  return kAvx2 ? Isa::kAvx2 : Isa::kScalar;
}

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::kAvx2 && detected_isa() != Isa::kAvx2) {
    throw InvalidArgument("AVX2 kernels are not available on this machine");
  }
  active_slot().store(isa, std::memory_order_relaxed);
}

template <>
const KernelTable<float>* avx2<float>() {
#if defined(H2KE_HAVE_AVX2)
  if (detected_isa() == Isa::kAvx2) return &detail::avx2_float();
#endif
  return nullptr;
}

template <>
const KernelTable<double>* avx2<double>() {
#if defined(H2KE_HAVE_AVX2)
  if (detected_isa() == Isa::kAvx2) return &detail::avx2_double();
#endif
  return nullptr;
}

template <typename T>
const KernelTable<T>& active() {
  if (active_isa() == Isa::kAvx2) {
    if (const auto* t = avx2<T>()) return *t;
  }
  return scalar<T>();
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace h2ke::kernels
