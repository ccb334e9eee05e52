// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stage building blocks: the conv+LayerNorm stem/transition embeddings, the
// MBlock feed-forward (fc -> depthwise 3x3 -> GELU -> fc), and the
// pre-norm Transformer block
//     z   = x + Attn(LN(x))
//     out = z + FFN(LN(z)).

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "paca/attention.hpp"
#include "paca/params.hpp"
#include "paca/tensor.hpp"

namespace paca {

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t out_channels = 1;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

enum class AttentionVariant { kPaca, kMhsa, kNested };

std::string_view variant_name(AttentionVariant v);
AttentionVariant parse_variant(std::string_view name);

// Overlapping patch embedding: zero-padded conv then LayerNorm.
template <typename T>
struct EmbedParams {
  ConvSpec spec;
  Tensor<T> conv_weight;  // [k, k, Cin, Cout]
  Tensor<T> conv_bias;
  LayerNormParams<T> norm;
};

template <typename T>
struct FfnParams {
  LinearParams<T> fc1;    // C -> eC
  Tensor<T> dw_weight;    // [3, 3, 1, eC]
  Tensor<T> dw_bias;
  LinearParams<T> fc2;    // eC -> C
  std::size_t expansion = 1;
};

template <typename T>
struct BlockParams {
  AttentionVariant variant = AttentionVariant::kMhsa;
  LayerNormParams<T> norm1;
  AttentionParams<T> attn;
  std::optional<ClusterParams<T>> cluster;          // kPaca
  std::optional<LayerNormParams<T>> token_norm;     // kPaca
  std::optional<NestedParams<T>> nested;            // kNested
  LayerNormParams<T> norm2;
  FfnParams<T> ffn;
};

template <typename T>
struct BlockOutput {
  Tensor<T> x;
  std::optional<ClusterAssignment<T>> clusters;  // kPaca only
  Tensor<T> attn;                                // [h, N, M]
};

// image [H0, W0, Cin] -> sequence [N, C] and its grid.
template <typename T>
std::pair<Tensor<T>, Grid> stem(const Tensor<T>& image, const EmbedParams<T>& p);

// sequence [N, C] on `grid` -> downsampled sequence [N', C'] and its grid.
template <typename T>
std::pair<Tensor<T>, Grid> transition(const Tensor<T>& x, Grid grid, const EmbedParams<T>& p);

template <typename T>
Tensor<T> mblock_ffn(const Tensor<T>& x, Grid grid, const FfnParams<T>& p);

template <typename T>
BlockOutput<T> transformer_block(const Tensor<T>& x, Grid grid, const BlockParams<T>& p);

template <typename T>
EmbedParams<T> make_embed_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t in_channels,
                                 ConvSpec spec);

template <typename T>
FfnParams<T> make_ffn_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                             std::size_t expansion);

struct BlockShape {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t expansion = 4;
  AttentionVariant variant = AttentionVariant::kMhsa;
  std::size_t clusters = 0;   // kPaca
  std::size_t reduction = 4;  // kPaca
  std::size_t patch = 1;      // kNested
};

template <typename T>
BlockParams<T> make_block_params(ParamBuilder<T>& b, const std::string& prefix, const BlockShape& shape);

}  // namespace paca
