// SPDX-License-Identifier: Apache-2.0
#include "paca/blocks.hpp"

#include <stdexcept>

#include "paca/flops.hpp"
#include "paca/ops.hpp"

namespace paca {

std::string_view variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kPaca: return "paca";
    case AttentionVariant::kMhsa: return "mhsa";
    case AttentionVariant::kNested: return "nested";
  }
  return "?";
}

AttentionVariant parse_variant(std::string_view name) {
  if (name == "paca") return AttentionVariant::kPaca;
  if (name == "mhsa" || name == "vanilla") return AttentionVariant::kMhsa;
  if (name == "nested") return AttentionVariant::kNested;
  throw std::invalid_argument("unknown attention variant '" + std::string(name) + "'");
}

namespace {

template <typename T>
std::pair<Tensor<T>, Grid> embed_map(const Tensor<T>& map, const EmbedParams<T>& p) {
  const ConvSpec& s = p.spec;
  Tensor<T> y = conv2d(map, p.conv_weight, p.conv_bias, {.stride = s.stride, .pad = s.pad, .groups = 1});
  const Grid grid{y.dim(0), y.dim(1)};
  Tensor<T> seq = reshape(y, Shape{grid.size(), y.dim(2)});
  return {apply_layer_norm(seq, p.norm), grid};
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Grid> stem(const Tensor<T>& image, const EmbedParams<T>& p) {
  if (image.rank() != 3) throw ShapeError("stem: expected [H0, W0, C], got " + image.shape().to_string());
  return embed_map(image, p);
}

template <typename T>
std::pair<Tensor<T>, Grid> transition(const Tensor<T>& x, Grid grid, const EmbedParams<T>& p) {
  if (x.rank() != 2 || x.dim(0) != grid.size()) {
    throw ShapeError("transition: sequence " + x.shape().to_string() + " does not match grid " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  return embed_map(reshape(x, Shape{grid.height, grid.width, x.dim(1)}), p);
}

template <typename T>
Tensor<T> mblock_ffn(const Tensor<T>& x, Grid grid, const FfnParams<T>& p) {
  if (x.rank() != 2 || x.dim(0) != grid.size()) {
    throw ShapeError("mblock_ffn: sequence " + x.shape().to_string() + " does not match grid " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  FlopScope scope(FlopBucket::kFfn);
  Tensor<T> hidden = linear(x, p.fc1.weight, p.fc1.bias);
  const std::size_t width = hidden.dim(1);
  Tensor<T> map = reshape(hidden, Shape{grid.height, grid.width, width});
  map = gelu(conv2d(map, p.dw_weight, p.dw_bias, {.stride = 1, .pad = 1, .groups = width}));
  return linear(reshape(map, Shape{grid.size(), width}), p.fc2.weight, p.fc2.bias);
}

template <typename T>
BlockOutput<T> transformer_block(const Tensor<T>& x, Grid grid, const BlockParams<T>& p) {
  if (x.rank() != 2 || x.dim(0) != grid.size()) {
    throw ShapeError("transformer_block: sequence " + x.shape().to_string() + " does not match grid");
  }
  BlockOutput<T> r;
  const Tensor<T> normed = apply_layer_norm(x, p.norm1);
  Tensor<T> attended;
  switch (p.variant) {
    case AttentionVariant::kPaca: {
      auto a = paca_attention(normed, grid, p.cluster.value(), p.token_norm.value(), p.attn);
      attended = a.out;
      r.clusters = std::move(a.clusters);
      r.attn = a.attn;
      break;
    }
    case AttentionVariant::kMhsa: {
      auto a = mhsa(normed, p.attn);
      attended = a.out;
      r.attn = a.attn;
      break;
    }
    case AttentionVariant::kNested: {
      auto a = nested_attention(normed, grid, p.nested.value(), p.attn);
      attended = a.out;
      r.attn = a.attn;
      break;
    }
  }
  Tensor<T> z = add(x, attended);
  r.x = add(z, mblock_ffn(apply_layer_norm(z, p.norm2), grid, p.ffn));
  return r;
}

template <typename T>
EmbedParams<T> make_embed_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t in_channels,
                                 ConvSpec spec) {
  if (spec.kernel == 0 || spec.stride == 0 || spec.out_channels == 0) {
    throw std::invalid_argument(prefix + ": conv kernel, stride and channels must be >= 1");
  }
  EmbedParams<T> p;
  p.spec = spec;
  p.conv_weight = b.conv_kernel(prefix + ".conv.weight", spec.kernel, in_channels, spec.out_channels, 1);
  p.conv_bias = b.constant(prefix + ".conv.bias", Shape{spec.out_channels}, T(0));
  p.norm = b.layer_norm(prefix + ".norm", spec.out_channels);
  return p;
}

template <typename T>
FfnParams<T> make_ffn_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels,
                             std::size_t expansion) {
  if (expansion == 0) throw std::invalid_argument(prefix + ": expansion ratio must be >= 1");
  const std::size_t hidden = channels * expansion;
  FfnParams<T> p;
  p.fc1 = b.linear(prefix + ".fc1", channels, hidden);
  p.dw_weight = b.conv_kernel(prefix + ".dwconv.weight", 3, 1, hidden, hidden);
  p.dw_bias = b.constant(prefix + ".dwconv.bias", Shape{hidden}, T(0));
  p.fc2 = b.linear(prefix + ".fc2", hidden, channels);
  p.expansion = expansion;
  return p;
}

template <typename T>
BlockParams<T> make_block_params(ParamBuilder<T>& b, const std::string& prefix, const BlockShape& shape) {
  BlockParams<T> p;
  p.variant = shape.variant;
  p.norm1 = b.layer_norm(prefix + ".norm1", shape.channels);
  p.attn = make_attention_params(b, prefix + ".attn", shape.channels, shape.heads);
  if (shape.variant == AttentionVariant::kPaca) {
    p.cluster = make_cluster_params(b, prefix + ".attn.cluster", shape.channels, shape.clusters, shape.reduction);
    p.token_norm = b.layer_norm(prefix + ".attn.token_norm", shape.channels);
  } else if (shape.variant == AttentionVariant::kNested) {
    p.nested = make_nested_params(b, prefix + ".attn.nested", shape.channels, shape.patch);
  }
  p.norm2 = b.layer_norm(prefix + ".norm2", shape.channels);
  p.ffn = make_ffn_params(b, prefix + ".mlp", shape.channels, shape.expansion);
  return p;
}

#define PACA_INSTANTIATE_BLOCKS(T)                                                                         \
  template std::pair<Tensor<T>, Grid> stem(const Tensor<T>&, const EmbedParams<T>&);                      \
  template std::pair<Tensor<T>, Grid> transition(const Tensor<T>&, Grid, const EmbedParams<T>&);          \
  template Tensor<T> mblock_ffn(const Tensor<T>&, Grid, const FfnParams<T>&);                              \
  template BlockOutput<T> transformer_block(const Tensor<T>&, Grid, const BlockParams<T>&);                \
  template EmbedParams<T> make_embed_params(ParamBuilder<T>&, const std::string&, std::size_t, ConvSpec);  \
  template FfnParams<T> make_ffn_params(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t);   \
  template BlockParams<T> make_block_params(ParamBuilder<T>&, const std::string&, const BlockShape&);

PACA_INSTANTIATE_BLOCKS(float)
PACA_INSTANTIATE_BLOCKS(double)

#undef PACA_INSTANTIATE_BLOCKS

}  // namespace paca
