// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stage-wise PaCa-ViT. Each stage is an overlapping conv embedding (stem for
// the first stage, transition afterwards), a stack of Transformer blocks and
// a LayerNorm. The classifier pools the last stage's normalized tokens and
// applies one fully-connected layer. No positional encodings.
//
// Presets b0/b1/b2 come in two input geometries:
//   in1k: 224x224 input, stem (7,4,3), PaCa in stages 1-3 with M=49
//   c100: 32x32 input, stem (3,1,1), PaCa in stages 1-2 with M=64, stage-4
//         transition (3,1,1)
// Stage 4 is always plain MHSA.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "paca/attention.hpp"
#include "paca/blocks.hpp"
#include "paca/params.hpp"
#include "paca/tensor.hpp"

namespace paca {

enum class Geometry { kIn1k, kC100, kCustom };

std::string_view geometry_name(Geometry g);
Geometry parse_geometry(std::string_view name);

struct StageConfig {
  ConvSpec conv;  // stem for stage 0, transition afterwards; out_channels == channels
  std::size_t channels = 0;
  std::size_t depth = 1;
  std::size_t heads = 1;
  std::size_t expansion = 4;
  AttentionVariant variant = AttentionVariant::kMhsa;
  std::size_t clusters = 0;   // kPaca
  std::size_t reduction = 4;  // kPaca
  std::size_t patch = 1;      // kNested
  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct ModelConfig {
  std::string name = "custom";
  std::vector<StageConfig> stages;
  std::size_t input_height = 0;
  std::size_t input_width = 0;
  std::size_t input_channels = 3;
  std::size_t num_classes = 0;
  Geometry geometry = Geometry::kCustom;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  // Canonical one-line text form; the name is not part of it.
  std::string canonical() const;
  // FNV-1a 64 over canonical().
  std::uint64_t hash() const;
  // Spatial extents after each stage.
  std::vector<Grid> stage_grids() const;
};

// "b0" | "b1" | "b2" | "tiny-debug". The tiny-debug preset is a 2-stage,
// 16x16-input model for fast tests; geometry is ignored for it.
ModelConfig preset(std::string_view name, Geometry geometry, std::size_t num_classes);

std::uint64_t fnv1a64(std::string_view bytes);

template <typename T>
struct StageParams {
  EmbedParams<T> embed;
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> norm;
};

// What a Transformer block exposes for explanation.
template <typename T>
struct LayerExplanation {
  std::size_t layer = 0;  // block index across all stages
  std::size_t stage = 0;
  AttentionVariant variant = AttentionVariant::kMhsa;
  Grid grid;
  std::optional<ClusterAssignment<T>> clusters;
  Tensor<T> attn;
};

template <typename T>
class PacaModel {
 public:
  const ModelConfig& config() const { return config_; }
  const ParamRegistry<T>& params() const { return params_; }
  ParamRegistry<T>& params() { return params_; }
  const std::vector<StageParams<T>>& stages() const { return stages_; }
  const LinearParams<T>& head() const { return head_; }
  std::size_t num_layers() const;

  template <typename U>
  friend PacaModel<U> build_model(const ModelConfig& cfg, std::uint64_t seed);

 private:
  ModelConfig config_;
  std::vector<StageParams<T>> stages_;
  LinearParams<T> head_;
  ParamRegistry<T> params_;
};

// Deterministic: the same (cfg, seed) yields bitwise-identical parameters.
template <typename T>
PacaModel<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // [B, classes]
  // Per image, one entry per Transformer block; empty unless retained.
  std::vector<std::vector<LayerExplanation<T>>> explanations;
};

// batch [B, H0, W0, C0] of normalized pixels.
template <typename T>
ForwardResult<T> forward(const PacaModel<T>& model, const Tensor<T>& batch, bool retain_explanations);

// image [H0, W0, C0] -> logits [classes]. Appends to `retained` if non-null.
template <typename T>
Tensor<T> forward_image(const PacaModel<T>& model, const Tensor<T>& image,
                        std::vector<LayerExplanation<T>>* retained = nullptr);

template <typename T>
std::size_t param_count(const PacaModel<T>& model);

// Total explanation records retained by forward passes in this process.
std::uint64_t retained_explanation_count();

}  // namespace paca
