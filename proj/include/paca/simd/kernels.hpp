// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop arithmetic kernels with a scalar reference and ISA-specific
// variants. Every variant vectorizes across independent output elements only,
// so each output element sees the same sequence of rounded multiply and add
// operations as the scalar loop. Results are bit-identical across variants.

#include <cstddef>
#include <string_view>

namespace paca::simd {

enum class Isa { kScalar, kAvx2, kNeon };

template <typename T>
struct Kernels {
  // y[i] += a * x[i]
  void (*axpy)(T a, const T* x, T* y, std::size_t n);
  // y[i] += x[i] * w[i]
  void (*mul_acc)(const T* x, const T* w, T* y, std::size_t n);
  // y[i] += x[i]
  void (*add)(const T* x, T* y, std::size_t n);
  // y[i] *= a
  void (*scale)(T a, T* y, std::size_t n);
};

// Kernels for the currently selected ISA. The first call picks the best
// supported ISA, unless PACA_SIMD=scalar|avx2|neon overrides it.
template <typename T>
const Kernels<T>& kernels();

// Kernels for a specific ISA; throws std::runtime_error if unsupported here.
template <typename T>
const Kernels<T>& kernels_for(Isa isa);

bool isa_supported(Isa isa);
Isa active_isa();
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);
Isa parse_isa(std::string_view name);

namespace detail {
template <typename T>
const Kernels<T>& scalar_kernels();
#if defined(PACA_HAVE_AVX2)
template <typename T>
const Kernels<T>& avx2_kernels();
#endif
#if defined(PACA_HAVE_NEON)
template <typename T>
const Kernels<T>& neon_kernels();
#endif
}  // namespace detail

}  // namespace paca::simd
