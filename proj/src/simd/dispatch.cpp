// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "paca/simd/kernels.hpp"

namespace paca::simd {
namespace {

Isa best_supported() {
  if (isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  if (isa_supported(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

Isa initial_isa() {
  if (const char* env = std::getenv("PACA_SIMD"); env != nullptr && *env != '\0') {
    const Isa requested = parse_isa(env);
    if (isa_supported(requested)) return requested;
  }
  return best_supported();
}

std::atomic<Isa>& selected() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(PACA_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::kNeon:
#if defined(PACA_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return selected().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("SIMD ISA not supported on this host: " + std::string(isa_name(isa)));
  }
  selected().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "unknown";
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  if (name == "neon") return Isa::kNeon;
  throw std::invalid_argument("unknown SIMD ISA '" + std::string(name) + "'");
}

template <typename T>
const Kernels<T>& kernels_for(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("SIMD ISA not supported on this host: " + std::string(isa_name(isa)));
  }
  switch (isa) {
#if defined(PACA_HAVE_AVX2)
    case Isa::kAvx2: return detail::avx2_kernels<T>();
#endif
#if defined(PACA_HAVE_NEON)
    case Isa::kNeon: return detail::neon_kernels<T>();
#endif
    default: return detail::scalar_kernels<T>();
  }
}

template <typename T>
const Kernels<T>& kernels() {
  return kernels_for<T>(active_isa());
}

template const Kernels<float>& kernels<float>();
template const Kernels<double>& kernels<double>();
template const Kernels<float>& kernels_for<float>(Isa);
template const Kernels<double>& kernels_for<double>(Isa);

}  // namespace paca::simd
