// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "paca/model.hpp"
#include "paca/rng.hpp"
#include "paca/tensor.hpp"

namespace support {

struct CheckResult {
  std::string name;
  double value = 0;      // measured error / statistic
  double tolerance = 0;  // pass when value < tolerance (or <= for exact checks)
  bool pass = false;
};

template <typename T>
paca::Tensor<T> randn(paca::Shape shape, paca::Rng& rng, double scale = 1.0) {
  paca::Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(scale * rng.normal());
  return t;
}

// Gives every parameter generic values: weights keep their init, biases and
// LayerNorm affine terms get small random offsets.
template <typename T>
void jitter_params(paca::ParamRegistry<T>& params, paca::Rng& rng, double scale = 0.1);

struct GradCheck {
  double max_rel = 0;
  double max_abs = 0;
  std::size_t checked = 0;
  // Taped and finite-difference values at the worst relative element.
  double worst_analytic = 0;
  double worst_numeric = 0;
};

// Central differences with step h on every element of every input. A
// scalar output is checked directly; any other output is contracted with
// fixed random weights drawn from `probe_seed`. An element whose absolute
// difference is at most `abs_floor` counts as exact.
GradCheck gradcheck(const std::function<paca::Tensor<double>()>& output, std::vector<paca::Tensor<double>> inputs,
                    std::uint64_t probe_seed, double h = 1e-5, double abs_floor = 1e-9);

// The small two-stage model used for the end-to-end gradient check:
// 8x8 input, C=8 per stage, M=2, first stage N=16.
paca::ModelConfig tiny_gradcheck_config();

// Per-op gradient checks over `seeds` seeds; one result per op, tolerance 1e-6.
std::vector<CheckResult> op_gradient_suite(int seeds);

// Full-model loss gradient against finite differences, tolerance 1e-5.
CheckResult model_gradient_check(std::uint64_t seed);

// Library vs loop oracles on small instances, tolerance 1e-5.
std::vector<CheckResult> oracle_suite(std::uint64_t seed);

// Attention-row and cluster-column sums over `count` random inputs per
// mechanism and per layer of the tiny-debug model, tolerance 1e-5.
std::vector<CheckResult> stochasticity_suite(int count);

}  // namespace support
