// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable tensor operations. Layout is row-major and channels-last:
// sequences are [N, C], feature maps [H, W, C], conv weights
// [k, k, Cin/groups, Cout], linear weights [in, out].
//
// Every output element is accumulated left to right in a fixed order, so
// repeated calls on the same inputs are bitwise identical regardless of the
// SIMD variant selected.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "paca/tensor.hpp"

namespace paca {

// c = a . b for a[m,k], b[k,n], or batched a[B,m,k], b[B,k,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// x[..., C] + bias[C]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// x[N, in] . w[in, out] + b[out]; b may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Sum of all elements, shape [].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Mean over axis 0 of x[N, C], shape [C].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// Exact erf form: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
};

// Cross-correlation of x[H, W, Cin] with w[k, k, Cin/groups, Cout] and zero
// padding; bias[Cout] may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dGeometry geom);

// Output extent for one spatial axis, or ShapeError when the kernel does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// x[i] along axis 0.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index);

// Stacks equally shaped tensors along a new axis 0.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts);

// [N, C] -> [h, N, C/h] and back.
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

// Extension point for ops defined outside this file. If a tape is recording
// and any input requires gradients, marks `out` as requiring gradients and
// appends `backward` to the tape. `backward` runs once the gradient of `out`
// is complete; it reads out.grad() and calls accumulate_grad on inputs.
template <typename T>
void record_op(std::string name, const std::vector<Tensor<T>>& inputs, Tensor<T>& out,
               std::function<void()> backward);

// Throws NonFiniteError if finite checks are on and `x` holds NaN/Inf.
template <typename T>
void check_finite(const char* op, const Tensor<T>& x);

}  // namespace paca
