// SPDX-License-Identifier: Apache-2.0
#include "paca/model.hpp"

#include <atomic>
#include <sstream>
#include <stdexcept>

#include "paca/ops.hpp"

namespace paca {

namespace {

std::atomic<std::uint64_t> g_retained{0};

struct PresetShape {
  std::vector<std::size_t> channels, depths;
};

PresetShape preset_shape(std::string_view name) {
  if (name == "b0") return {{32, 64, 160, 256}, {2, 2, 2, 2}};
  if (name == "b1") return {{64, 128, 320, 512}, {2, 2, 2, 2}};
  if (name == "b2") return {{64, 128, 320, 512}, {3, 4, 6, 3}};
  throw std::invalid_argument("unknown model preset '" + std::string(name) + "' (expected b0, b1, b2, tiny-debug)");
}

}  // namespace

std::string_view geometry_name(Geometry g) {
  switch (g) {
    case Geometry::kIn1k: return "in1k";
    case Geometry::kC100: return "c100";
    case Geometry::kCustom: return "custom";
  }
  return "?";
}

Geometry parse_geometry(std::string_view name) {
  if (name == "in1k") return Geometry::kIn1k;
  if (name == "c100" || name == "cifar") return Geometry::kC100;
  if (name == "custom") return Geometry::kCustom;
  throw std::invalid_argument("unknown geometry '" + std::string(name) + "' (expected in1k or c100)");
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ModelConfig preset(std::string_view name, Geometry geometry, std::size_t num_classes) {
  ModelConfig cfg;
  cfg.name = std::string(name);
  cfg.num_classes = num_classes;

  if (name == "tiny-debug") {
    cfg.geometry = Geometry::kCustom;
    cfg.input_height = cfg.input_width = 16;
    const std::size_t channels[] = {8, 16};
    const std::size_t heads[] = {1, 2};
    for (std::size_t i = 0; i < 2; ++i) {
      StageConfig s;
      s.conv = {3, 2, 1, channels[i]};
      s.channels = channels[i];
      s.depth = 1;
      s.heads = heads[i];
      s.expansion = 2;
      s.variant = AttentionVariant::kPaca;
      s.clusters = 4;
      s.reduction = 2;
      cfg.stages.push_back(s);
    }
    cfg.validate();
    return cfg;
  }

  const PresetShape shape = preset_shape(name);
  const std::size_t heads[] = {1, 2, 5, 8};
  const std::size_t expansions[] = {8, 8, 4, 4};
  const bool in1k = geometry == Geometry::kIn1k;
  if (geometry == Geometry::kCustom) throw std::invalid_argument("presets need geometry in1k or c100");
  cfg.geometry = geometry;
  cfg.input_height = cfg.input_width = in1k ? 224 : 32;
  for (std::size_t i = 0; i < 4; ++i) {
    StageConfig s;
    s.channels = shape.channels[i];
    if (i == 0) {
      s.conv = in1k ? ConvSpec{7, 4, 3, s.channels} : ConvSpec{3, 1, 1, s.channels};
    } else if (i == 3 && !in1k) {
      s.conv = ConvSpec{3, 1, 1, s.channels};
    } else {
      s.conv = ConvSpec{3, 2, 1, s.channels};
    }
    s.depth = shape.depths[i];
    s.heads = heads[i];
    s.expansion = expansions[i];
    const bool paca = i < 2 || (i == 2 && in1k);
    s.variant = paca ? AttentionVariant::kPaca : AttentionVariant::kMhsa;
    s.clusters = paca ? (in1k ? 49 : 64) : 0;
    s.reduction = 4;
    cfg.stages.push_back(s);
  }
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
  if (stages.empty()) fail("no stages");
  if (num_classes == 0) fail("class count must be >= 1");
  if (input_height == 0 || input_width == 0 || input_channels == 0) fail("input extents must be >= 1");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    const std::string tag = "stage " + std::to_string(i + 1) + ": ";
    if (s.channels == 0 || s.depth == 0 || s.heads == 0 || s.expansion == 0) fail(tag + "zero-sized field");
    if (s.conv.out_channels != s.channels) fail(tag + "conv output channels differ from stage channels");
    if (s.conv.kernel == 0 || s.conv.stride == 0) fail(tag + "conv kernel and stride must be >= 1");
    if (s.channels % s.heads != 0) fail(tag + "channels not divisible by heads");
    if (s.variant == AttentionVariant::kPaca) {
      if (s.clusters == 0) fail(tag + "PaCa stage needs clusters >= 1");
      if (s.reduction == 0 || s.channels % s.reduction != 0) fail(tag + "channels not divisible by reduction ratio");
    }
    if (s.variant == AttentionVariant::kNested && s.patch == 0) fail(tag + "nested patch must be >= 1");
  }
  const auto grids = stage_grids();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].variant == AttentionVariant::kNested &&
        (grids[i].height % stages[i].patch != 0 || grids[i].width % stages[i].patch != 0)) {
      fail("stage " + std::to_string(i + 1) + ": grid not divisible by nested patch");
    }
  }
}

std::vector<Grid> ModelConfig::stage_grids() const {
  std::vector<Grid> grids;
  std::size_t h = input_height, w = input_width;
  for (const StageConfig& s : stages) {
    h = conv_output_extent(h, s.conv.kernel, s.conv.stride, s.conv.pad);
    w = conv_output_extent(w, s.conv.kernel, s.conv.stride, s.conv.pad);
    grids.push_back({h, w});
  }
  return grids;
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "in=" << input_channels << 'x' << input_height << 'x' << input_width << ";classes=" << num_classes
     << ";geometry=" << geometry_name(geometry) << ";stages=";
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    os << (i ? "|" : "") << 'k' << s.conv.kernel << 's' << s.conv.stride << 'p' << s.conv.pad << ":c" << s.channels
       << ":L" << s.depth << ":h" << s.heads << ":e" << s.expansion << ':' << variant_name(s.variant);
    if (s.variant == AttentionVariant::kPaca) os << ":M" << s.clusters << ":r" << s.reduction;
    if (s.variant == AttentionVariant::kNested) os << ":p" << s.patch;
  }
  return os.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(canonical()); }

template <typename T>
std::size_t PacaModel<T>::num_layers() const {
  std::size_t n = 0;
  for (const auto& s : stages_) n += s.blocks.size();
  return n;
}

template <typename T>
PacaModel<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamBuilder<T> b(seed);
  PacaModel<T> m;
  m.config_ = cfg;
  std::size_t in_channels = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& s = cfg.stages[i];
    const std::string prefix = "stage" + std::to_string(i + 1);
    StageParams<T> sp;
    sp.embed = make_embed_params(b, prefix + ".embed", in_channels, s.conv);
    for (std::size_t j = 0; j < s.depth; ++j) {
      BlockShape shape{s.channels, s.heads, s.expansion, s.variant, s.clusters, s.reduction, s.patch};
      sp.blocks.push_back(make_block_params(b, prefix + ".block" + std::to_string(j), shape));
    }
    sp.norm = b.layer_norm(prefix + ".norm", s.channels);
    m.stages_.push_back(std::move(sp));
    in_channels = s.channels;
  }
  m.head_ = b.linear("head", in_channels, cfg.num_classes);
  m.params_ = b.take_registry();
  return m;
}

template <typename T>
Tensor<T> forward_image(const PacaModel<T>& model, const Tensor<T>& image, std::vector<LayerExplanation<T>>* retained) {
  const ModelConfig& cfg = model.config();
  if (image.shape() != Shape{cfg.input_height, cfg.input_width, cfg.input_channels}) {
    throw ShapeError("forward: image " + image.shape().to_string() + " does not match model input " +
                     Shape{cfg.input_height, cfg.input_width, cfg.input_channels}.to_string());
  }
  Tensor<T> x;
  Grid grid;
  std::size_t layer = 0;
  for (std::size_t i = 0; i < model.stages().size(); ++i) {
    const StageParams<T>& sp = model.stages()[i];
    std::tie(x, grid) = i == 0 ? stem(image, sp.embed) : transition(x, grid, sp.embed);
    for (const BlockParams<T>& bp : sp.blocks) {
      BlockOutput<T> out = transformer_block(x, grid, bp);
      x = out.x;
      if (retained != nullptr) {
        retained->push_back({layer, i, bp.variant, grid, std::move(out.clusters), out.attn});
        g_retained.fetch_add(1, std::memory_order_relaxed);
      }
      ++layer;
    }
    x = apply_layer_norm(x, sp.norm);
  }
  const Tensor<T> pooled = reshape(mean_rows(x), Shape{1, x.dim(1)});
  const Tensor<T> logits = linear(pooled, model.head().weight, model.head().bias);
  return reshape(logits, Shape{cfg.num_classes});
}

template <typename T>
ForwardResult<T> forward(const PacaModel<T>& model, const Tensor<T>& batch, bool retain_explanations) {
  if (batch.rank() != 4) throw ShapeError("forward: expected batch [B, H0, W0, C0], got " + batch.shape().to_string());
  ForwardResult<T> r;
  std::vector<Tensor<T>> rows;
  rows.reserve(batch.dim(0));
  if (retain_explanations) r.explanations.resize(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    rows.push_back(forward_image(model, select(batch, i), retain_explanations ? &r.explanations[i] : nullptr));
  }
  r.logits = stack(rows);
  return r;
}

template <typename T>
std::size_t param_count(const PacaModel<T>& model) {
  std::size_t n = 0;
  for (const auto& [name, t] : model.params()) n += t.numel();
  return n;
}

std::uint64_t retained_explanation_count() { return g_retained.load(std::memory_order_relaxed); }

#define PACA_INSTANTIATE_MODEL(T)                                                                              \
  template class PacaModel<T>;                                                                                 \
  template PacaModel<T> build_model<T>(const ModelConfig&, std::uint64_t);                                     \
  template Tensor<T> forward_image(const PacaModel<T>&, const Tensor<T>&, std::vector<LayerExplanation<T>>*); \
  template ForwardResult<T> forward(const PacaModel<T>&, const Tensor<T>&, bool);                             \
  template std::size_t param_count(const PacaModel<T>&);

PACA_INSTANTIATE_MODEL(float)
PACA_INSTANTIATE_MODEL(double)

#undef PACA_INSTANTIATE_MODEL

}  // namespace paca
