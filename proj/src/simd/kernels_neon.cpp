// SPDX-License-Identifier: Apache-2.0
// AArch64 only. vmlaq_f32 may fuse on some cores, so multiply and add are
// issued separately to keep scalar-identical rounding.
#include <arm_neon.h>

#include "paca/simd/kernels.hpp"

namespace paca::simd::detail {
namespace {

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vmulq_f32(va, vld1q_f32(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void mul_acc_f32(const float* x, const float* w, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vmulq_f32(vld1q_f32(x + i), vld1q_f32(w + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + x[i] * w[i];
}

void mul_acc_f64(const double* x, const double* w, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(vld1q_f64(x + i), vld1q_f64(w + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + x[i] * w[i];
}

void add_f32(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] = y[i] + x[i];
}

void add_f64(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = y[i] + x[i];
}

void scale_f32(float a, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_n_f32(vld1q_f32(y + i), a));
  for (; i < n; ++i) y[i] = y[i] * a;
}

void scale_f64(double a, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_n_f64(vld1q_f64(y + i), a));
  for (; i < n; ++i) y[i] = y[i] * a;
}

}  // namespace

template <>
const Kernels<float>& neon_kernels<float>() {
  static const Kernels<float> table{&axpy_f32, &mul_acc_f32, &add_f32, &scale_f32};
  return table;
}

template <>
const Kernels<double>& neon_kernels<double>() {
  static const Kernels<double> table{&axpy_f64, &mul_acc_f64, &add_f64, &scale_f64};
  return table;
}

}  // namespace paca::simd::detail
