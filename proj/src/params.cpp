// SPDX-License-Identifier: Apache-2.0
#include "paca/params.hpp"

#include <cmath>
#include <stdexcept>

#include "paca/ops.hpp"

namespace paca {

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& ln) {
  return layer_norm(x, ln.gamma, ln.beta, static_cast<T>(kLayerNormEps));
}

template <typename T>
Tensor<T> ParamBuilder<T>::add(const std::string& name, Tensor<T> t) {
  t.set_requires_grad(true);
  if (!registry_.emplace(name, t).second) throw std::logic_error("duplicate parameter name: " + name);
  return t;
}

template <typename T>
Tensor<T> ParamBuilder<T>::trunc_normal(const std::string& name, Shape shape, double stddev) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) {
    double z = rng_.normal();
    while (std::abs(z) > 2.0) z = rng_.normal();
    v = static_cast<T>(z * stddev);
  }
  return add(name, t);
}

template <typename T>
Tensor<T> ParamBuilder<T>::conv_kernel(const std::string& name, std::size_t k, std::size_t cin_per_group,
                                       std::size_t cout, std::size_t groups) {
  const double fan_out = static_cast<double>(k * k * cout) / static_cast<double>(groups);
  const double stddev = std::sqrt(2.0 / fan_out);
  Tensor<T> t(Shape{k, k, cin_per_group, cout});
  for (T& v : t.data()) v = static_cast<T>(rng_.normal() * stddev);
  return add(name, t);
}

template <typename T>
Tensor<T> ParamBuilder<T>::constant(const std::string& name, Shape shape, T value) {
  return add(name, Tensor<T>(std::move(shape), value));
}

template <typename T>
LinearParams<T> ParamBuilder<T>::linear(const std::string& prefix, std::size_t in, std::size_t out) {
  LinearParams<T> p;
  p.weight = trunc_normal(prefix + ".weight", Shape{in, out});
  p.bias = constant(prefix + ".bias", Shape{out}, T(0));
  return p;
}

template <typename T>
LayerNormParams<T> ParamBuilder<T>::layer_norm(const std::string& prefix, std::size_t channels) {
  LayerNormParams<T> p;
  p.gamma = constant(prefix + ".weight", Shape{channels}, T(1));
  p.beta = constant(prefix + ".bias", Shape{channels}, T(0));
  return p;
}

template Tensor<float> apply_layer_norm(const Tensor<float>&, const LayerNormParams<float>&);
template Tensor<double> apply_layer_norm(const Tensor<double>&, const LayerNormParams<double>&);
template class ParamBuilder<float>;
template class ParamBuilder<double>;

}  // namespace paca
