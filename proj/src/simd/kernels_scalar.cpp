// SPDX-License-Identifier: Apache-2.0
#include "paca/simd/kernels.hpp"

namespace paca::simd::detail {
namespace {

template <typename T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

template <typename T>
void mul_acc(const T* x, const T* w, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + x[i] * w[i];
}

template <typename T>
void add(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + x[i];
}

template <typename T>
void scale(T a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] * a;
}

}  // namespace

template <typename T>
const Kernels<T>& scalar_kernels() {
  static const Kernels<T> table{&axpy<T>, &mul_acc<T>, &add<T>, &scale<T>};
  return table;
}

template const Kernels<float>& scalar_kernels<float>();
template const Kernels<double>& scalar_kernels<double>();

}  // namespace paca::simd::detail
