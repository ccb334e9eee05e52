// SPDX-License-Identifier: Apache-2.0
#pragma once

// Three ways of attending from N patch queries:
//   mhsa              keys/values are the N patches themselves (N x N)
//   nested_attention  keys/values come from a strided conv of the patch map
//                     (N x N/p^2, still quadratic in N)
//   paca_attention    keys/values are M learned cluster tokens (N x M, M fixed)
//
// Attention is split into h heads of width d = C/h and scaled by 1/sqrt(d)
// per head. Q/K/V and output projections carry biases.

#include <cstddef>
#include <string>

#include "paca/params.hpp"
#include "paca/tensor.hpp"

namespace paca {

struct Grid {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t size() const { return height * width; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

template <typename T>
struct AttentionParams {
  LinearParams<T> q, k, v, proj;
  std::size_t heads = 1;
};

// Squeeze conv (3x3, stride 1, pad 1, C -> C/r) followed by a linear map to
// M cluster logits per position.
template <typename T>
struct ClusterParams {
  Tensor<T> conv_weight;  // [3, 3, C, C/r]
  Tensor<T> conv_bias;    // [C/r]
  LinearParams<T> assign;  // [C/r, M]
  std::size_t clusters = 0;
  std::size_t reduction = 1;
};

template <typename T>
struct NestedParams {
  Tensor<T> conv_weight;  // [p, p, C, C]
  Tensor<T> conv_bias;
  LayerNormParams<T> norm;
  std::size_t patch = 1;
};

// Column-stochastic N x M soft assignment of positions to clusters.
template <typename T>
struct ClusterAssignment {
  Tensor<T> weights;  // [N, M]
  Grid grid;
  std::size_t positions() const { return weights.dim(0); }
  std::size_t clusters() const { return weights.dim(1); }
};

template <typename T>
struct AttentionOutput {
  Tensor<T> out;   // [N, C] or [h, N, d] for scaled_attention
  Tensor<T> attn;  // [h, N, M], rows sum to one
};

template <typename T>
struct PacaAttentionOutput {
  Tensor<T> out;
  ClusterAssignment<T> clusters;
  Tensor<T> attn;
};

template <typename T>
AttentionOutput<T> scaled_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

template <typename T>
AttentionOutput<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p);

template <typename T>
ClusterAssignment<T> compute_clusters(const Tensor<T>& x, Grid grid, const ClusterParams<T>& p);

// LayerNorm(C^T . X): M pooled tokens, each a convex combination of rows of x.
template <typename T>
Tensor<T> paca_tokens(const ClusterAssignment<T>& c, const Tensor<T>& x, const LayerNormParams<T>& ln);

template <typename T>
PacaAttentionOutput<T> paca_attention(const Tensor<T>& x, Grid grid, const ClusterParams<T>& cp,
                                      const LayerNormParams<T>& token_norm, const AttentionParams<T>& ap);

template <typename T>
Tensor<T> nested_embed_tokens(const Tensor<T>& x, Grid grid, const NestedParams<T>& p);

template <typename T>
AttentionOutput<T> nested_attention(const Tensor<T>& x, Grid grid, const NestedParams<T>& np,
                                    const AttentionParams<T>& ap);

// Parameter construction; names are registered under `prefix`.
template <typename T>
AttentionParams<T> make_attention_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                                         std::size_t heads);

template <typename T>
ClusterParams<T> make_cluster_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                                     std::size_t clusters, std::size_t reduction);

template <typename T>
NestedParams<T> make_nested_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                                   std::size_t patch);

}  // namespace paca
