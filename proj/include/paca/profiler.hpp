// SPDX-License-Identifier: Apache-2.0
#pragma once

// FLOP accounting for one attention layer (optionally with its MBlock FFN).
// Counts are multiply-adds; one multiply-add is 2 FLOPs. Softmax is counted
// per normalized element at 2 FLOPs (exp + divide) and kept out of the
// multiply-add total. Convolutions count padded taps.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "paca/flops.hpp"

namespace paca {

enum class Mechanism { kVanilla, kNested, kPaca };

std::string_view mechanism_name(Mechanism m);
Mechanism parse_mechanism(std::string_view name);

struct LayerSpec {
  Mechanism mechanism = Mechanism::kVanilla;
  std::size_t n = 0;          // tokens
  std::size_t channels = 0;   // C
  std::size_t heads = 1;
  std::size_t m_or_p = 0;     // clusters M (paca) or patch p (nested); unused for vanilla
  std::size_t reduction = 4;  // paca squeeze ratio
  std::optional<std::size_t> expansion;  // include the FFN when set

  // Throws std::invalid_argument for inconsistent parameters.
  void validate() const;
  // Keys/values per head row: N, N / p^2 or M.
  std::size_t kv_tokens() const;
};

struct FlopReport {
  std::uint64_t projection = 0;
  std::uint64_t attn_matrix = 0;
  std::uint64_t attn_apply = 0;
  std::uint64_t clustering = 0;
  std::uint64_t ffn = 0;
  std::uint64_t softmax_elements = 0;
  std::optional<std::int64_t> peak_elements;  // instrumented runs only

  std::uint64_t total_macs() const { return projection + attn_matrix + attn_apply + clustering + ffn; }
  // attn_matrix + attn_apply: the part that scales with N x kv_tokens.
  std::uint64_t attention_macs() const { return attn_matrix + attn_apply; }
  friend bool operator==(const FlopReport& a, const FlopReport& b) {
    return a.projection == b.projection && a.attn_matrix == b.attn_matrix && a.attn_apply == b.attn_apply &&
           a.clustering == b.clustering && a.ffn == b.ffn && a.softmax_elements == b.softmax_elements;
  }
};

FlopReport from_tally(const FlopTally& tally);

// Closed-form counts.
FlopReport attention_flops(const LayerSpec& spec);

// Runs the real layer on a near-square grid under a FlopCounter and records
// the peak number of live tensor elements above the starting level.
FlopReport instrumented_flops(const LayerSpec& spec, std::uint64_t seed = 0);

// Grid used for `n` tokens: the most square factorization whose sides are
// multiples of `multiple`.
std::pair<std::size_t, std::size_t> near_square_grid(std::size_t n, std::size_t multiple = 1);

// Least-squares slope of log(y) against log(x). Needs >= 2 positive points.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct ScalingRow {
  std::size_t n = 0;
  FlopReport report;
};

struct ScalingReport {
  LayerSpec base;
  std::vector<ScalingRow> rows;
  // Slope of attention_macs() against N.
  double slope = 0;

  void write_csv(std::ostream& os) const;
};

// Fewer than 3 sizes is an error.
ScalingReport scaling_report(const LayerSpec& base, const std::vector<std::size_t>& ns, bool instrumented);

}  // namespace paca
