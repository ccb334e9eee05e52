// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "paca/rng.hpp"
#include "paca/tensor.hpp"

namespace paca {

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& ln);

// Name -> tensor, sorted by name. Every trainable tensor appears once.
template <typename T>
using ParamRegistry = std::map<std::string, Tensor<T>>;

// Creates initialized, gradient-requiring parameters and registers them.
//   linear weights: normal(0, 0.02) truncated to +-2 std
//   conv kernels:   normal(0, sqrt(2 / fan_out)), fan_out = k*k*Cout/groups
//   biases zero, LayerNorm gamma one / beta zero
template <typename T>
class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> trunc_normal(const std::string& name, Shape shape, double stddev = 0.02);
  Tensor<T> conv_kernel(const std::string& name, std::size_t k, std::size_t cin_per_group, std::size_t cout,
                        std::size_t groups);
  Tensor<T> constant(const std::string& name, Shape shape, T value);
  LinearParams<T> linear(const std::string& prefix, std::size_t in, std::size_t out);
  LayerNormParams<T> layer_norm(const std::string& prefix, std::size_t channels);

  ParamRegistry<T>& registry() { return registry_; }
  ParamRegistry<T> take_registry() { return std::move(registry_); }

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t);

  Rng rng_;
  ParamRegistry<T> registry_;
};

}  // namespace paca
