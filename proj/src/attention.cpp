// SPDX-License-Identifier: Apache-2.0
#include "paca/attention.hpp"

#include <cmath>

#include "paca/flops.hpp"
#include "paca/ops.hpp"

namespace paca {

namespace {

void require_grid(const char* op, std::size_t n, Grid grid) {
  if (grid.size() != n) {
    throw ShapeError(std::string(op) + ": sequence length " + std::to_string(n) + " != " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
}

template <typename T>
Tensor<T> project(const Tensor<T>& x, const LinearParams<T>& p) {
  FlopScope scope(FlopBucket::kProjection);
  return linear(x, p.weight, p.bias);
}

// Q from `x`, K and V from `kv_source`, then per-head attention and the
// output projection.
template <typename T>
AttentionOutput<T> attend(const Tensor<T>& x, const Tensor<T>& kv_source, const AttentionParams<T>& p) {
  const std::size_t heads = p.heads;
  Tensor<T> q = split_heads(project(x, p.q), heads);
  Tensor<T> k = split_heads(project(kv_source, p.k), heads);
  Tensor<T> v = split_heads(project(kv_source, p.v), heads);
  AttentionOutput<T> r = scaled_attention(q, k, v);
  r.out = project(merge_heads(r.out), p.proj);
  return r;
}

}  // namespace

template <typename T>
AttentionOutput<T> scaled_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) ||
      q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1)) {
    throw ShapeError("scaled_attention: inconsistent q " + q.shape().to_string() + ", k " + k.shape().to_string() +
                     ", v " + v.shape().to_string());
  }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
  AttentionOutput<T> r;
  Tensor<T> scores;
  {
    FlopScope scope(FlopBucket::kAttentionMatrix);
    scores = matmul(q, transpose(k));
  }
  r.attn = softmax(scale(scores, inv_sqrt_d), 2);
  {
    FlopScope scope(FlopBucket::kAttentionApply);
    r.out = matmul(r.attn, v);
  }
  return r;
}

template <typename T>
AttentionOutput<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p) {
  if (x.rank() != 2) throw ShapeError("mhsa: expected [N, C], got " + x.shape().to_string());
  return attend(x, x, p);
}

template <typename T>
ClusterAssignment<T> compute_clusters(const Tensor<T>& x, Grid grid, const ClusterParams<T>& p) {
  if (x.rank() != 2) throw ShapeError("compute_clusters: expected [N, C], got " + x.shape().to_string());
  require_grid("compute_clusters", x.dim(0), grid);
  FlopScope scope(FlopBucket::kClustering);
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> map = reshape(x, Shape{grid.height, grid.width, c});
  Tensor<T> squeezed = gelu(conv2d(map, p.conv_weight, p.conv_bias, {.stride = 1, .pad = 1, .groups = 1}));
  Tensor<T> u = reshape(squeezed, Shape{n, squeezed.dim(2)});
  Tensor<T> logits = linear(u, p.assign.weight, p.assign.bias);
  return ClusterAssignment<T>{softmax(logits, 0), grid};
}

template <typename T>
Tensor<T> paca_tokens(const ClusterAssignment<T>& c, const Tensor<T>& x, const LayerNormParams<T>& ln) {
  if (c.weights.rank() != 2 || x.rank() != 2 || c.weights.dim(0) != x.dim(0)) {
    throw ShapeError("paca_tokens: assignment " + c.weights.shape().to_string() + " incompatible with x " +
                     x.shape().to_string());
  }
  Tensor<T> pooled;
  {
    FlopScope scope(FlopBucket::kClustering);
    pooled = matmul(transpose(c.weights), x);
  }
  return apply_layer_norm(pooled, ln);
}

template <typename T>
PacaAttentionOutput<T> paca_attention(const Tensor<T>& x, Grid grid, const ClusterParams<T>& cp,
                                      const LayerNormParams<T>& token_norm, const AttentionParams<T>& ap) {
  if (x.rank() != 2) throw ShapeError("paca_attention: expected [N, C], got " + x.shape().to_string());
  require_grid("paca_attention", x.dim(0), grid);
  ClusterAssignment<T> clusters = compute_clusters(x, grid, cp);
  Tensor<T> tokens = paca_tokens(clusters, x, token_norm);
  AttentionOutput<T> r = attend(x, tokens, ap);
  return PacaAttentionOutput<T>{r.out, std::move(clusters), r.attn};
}

template <typename T>
Tensor<T> nested_embed_tokens(const Tensor<T>& x, Grid grid, const NestedParams<T>& p) {
  if (x.rank() != 2) throw ShapeError("nested_embed_tokens: expected [N, C], got " + x.shape().to_string());
  require_grid("nested_embed_tokens", x.dim(0), grid);
  if (p.patch == 0 || grid.height % p.patch != 0 || grid.width % p.patch != 0) {
    throw ShapeError("nested_embed_tokens: grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                     " not divisible by patch " + std::to_string(p.patch));
  }
  Tensor<T> reduced;
  {
    FlopScope scope(FlopBucket::kClustering);
    Tensor<T> map = reshape(x, Shape{grid.height, grid.width, x.dim(1)});
    reduced = conv2d(map, p.conv_weight, p.conv_bias, {.stride = p.patch, .pad = 0, .groups = 1});
  }
  const std::size_t m = reduced.dim(0) * reduced.dim(1);
  return apply_layer_norm(reshape(reduced, Shape{m, reduced.dim(2)}), p.norm);
}

template <typename T>
AttentionOutput<T> nested_attention(const Tensor<T>& x, Grid grid, const NestedParams<T>& np,
                                    const AttentionParams<T>& ap) {
  return attend(x, nested_embed_tokens(x, grid, np), ap);
}

template <typename T>
AttentionParams<T> make_attention_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                                         std::size_t heads) {
  if (heads == 0 || channels % heads != 0) {
    throw std::invalid_argument(prefix + ": channels " + std::to_string(channels) + " not divisible by heads " +
                                std::to_string(heads));
  }
  AttentionParams<T> p;
  p.q = b.linear(prefix + ".q", channels, channels);
  p.k = b.linear(prefix + ".k", channels, channels);
  p.v = b.linear(prefix + ".v", channels, channels);
  p.proj = b.linear(prefix + ".proj", channels, channels);
  p.heads = heads;
  return p;
}

template <typename T>
ClusterParams<T> make_cluster_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                                     std::size_t clusters, std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0) {
    throw std::invalid_argument(prefix + ": channels " + std::to_string(channels) +
                                " not divisible by reduction ratio " + std::to_string(reduction));
  }
  if (clusters == 0) throw std::invalid_argument(prefix + ": cluster count must be >= 1");
  const std::size_t squeezed = channels / reduction;
  ClusterParams<T> p;
  p.conv_weight = b.conv_kernel(prefix + ".conv.weight", 3, channels, squeezed, 1);
  p.conv_bias = b.constant(prefix + ".conv.bias", Shape{squeezed}, T(0));
  p.assign = b.linear(prefix + ".assign", squeezed, clusters);
  p.clusters = clusters;
  p.reduction = reduction;
  return p;
}

template <typename T>
NestedParams<T> make_nested_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                                   std::size_t patch) {
  if (patch == 0) throw std::invalid_argument(prefix + ": patch size must be >= 1");
  NestedParams<T> p;
  p.conv_weight = b.conv_kernel(prefix + ".conv.weight", patch, channels, channels, 1);
  p.conv_bias = b.constant(prefix + ".conv.bias", Shape{channels}, T(0));
  p.norm = b.layer_norm(prefix + ".norm", channels);
  p.patch = patch;
  return p;
}

#define PACA_INSTANTIATE_ATTENTION(T)                                                                          \
  template AttentionOutput<T> scaled_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template AttentionOutput<T> mhsa(const Tensor<T>&, const AttentionParams<T>&);                              \
  template ClusterAssignment<T> compute_clusters(const Tensor<T>&, Grid, const ClusterParams<T>&);            \
  template Tensor<T> paca_tokens(const ClusterAssignment<T>&, const Tensor<T>&, const LayerNormParams<T>&);    \
  template PacaAttentionOutput<T> paca_attention(const Tensor<T>&, Grid, const ClusterParams<T>&,             \
                                                 const LayerNormParams<T>&, const AttentionParams<T>&);        \
  template Tensor<T> nested_embed_tokens(const Tensor<T>&, Grid, const NestedParams<T>&);                     \
  template AttentionOutput<T> nested_attention(const Tensor<T>&, Grid, const NestedParams<T>&,                \
                                               const AttentionParams<T>&);                                     \
  template AttentionParams<T> make_attention_params(ParamBuilder<T>&, const std::string&, std::size_t,        \
                                                    std::size_t);                                              \
  template ClusterParams<T> make_cluster_params(ParamBuilder<T>&, const std::string&, std::size_t,            \
                                                std::size_t, std::size_t);                                     \
  template NestedParams<T> make_nested_params(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t);

PACA_INSTANTIATE_ATTENTION(float)
PACA_INSTANTIATE_ATTENTION(double)

#undef PACA_INSTANTIATE_ATTENTION

}  // namespace paca
