// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded generator whose output sequence is fixed by the seed alone.
// std::*_distribution output is implementation-defined, so the conversions
// to uniform/normal/bounded-int values are done here explicitly.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace paca {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform in [0, bound), bound >= 1, rejection-sampled.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Mixes a base seed with a stream index (e.g. an epoch) into a new seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace paca
