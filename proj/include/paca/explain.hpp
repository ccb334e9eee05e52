// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward explanations from PaCa layers. Each cluster column of the
// assignment matrix is a spatial heatmap; masking the input with
// 1 - upsampled heatmap and measuring the drop in the true-class probability
// scores how much the prediction relies on that cluster.
//
// Images here are raw HWC floats in 0..255; they are normalized right before
// the forward pass, so masking to zero means black.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "paca/data.hpp"
#include "paca/model.hpp"

namespace paca {

class ExplainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HeatmapSource { kCluster, kAttention };

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  std::size_t layer = 0;
  std::size_t index = 0;  // cluster m
};

struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;  // HWC, 0..255
};

RawImage raw_image(const Dataset& ds, std::size_t index);

// Min-max normalization; a constant input maps to all zeros.
std::vector<double> min_max_normalize(std::span<const double> values);

// Shannon entropy (natural log) of a nonnegative vector treated as a
// distribution; 0 log 0 = 0.
double entropy(std::span<const double> p);

// Per-cluster source distributions of one layer, as M columns over N
// positions. kCluster reads the assignment columns directly. kAttention
// averages the attention over heads and rescales each column to sum to one.
// Throws ExplainError for a layer without clusters.
template <typename T>
std::vector<std::vector<double>> source_columns(const LayerExplanation<T>& layer, HeatmapSource source);

template <typename T>
std::vector<Heatmap> extract_heatmaps(const LayerExplanation<T>& layer, HeatmapSource source);

// Half-pixel-aligned bilinear resize with edge clamping.
std::vector<double> upsample_bilinear(const Heatmap& hm, std::size_t height, std::size_t width);

// x * upsample(1 - hm), per pixel and channel.
RawImage mask_image(const RawImage& image, const Heatmap& hm);

struct Prediction {
  std::vector<double> probs;
  std::size_t top = 0;
};

template <typename T>
Prediction predict(const PacaModel<T>& model, const RawImage& image);

// Forward pass that keeps every block's explanation record.
template <typename T>
std::vector<LayerExplanation<T>> explain_forward(const PacaModel<T>& model, const RawImage& image,
                                                 Prediction* prediction = nullptr);

struct ClusterScore {
  std::size_t cluster = 0;
  double importance = 0;  // p_y(x) - p_y(masked x)
  double entropy = 0;     // of the raw source column
  std::size_t rank = 0;   // 0 = most important
};

struct ImportanceReport {
  std::size_t layer = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double p_clean = 0;
  bool misclassified = false;  // the procedure assumes a correct prediction
  std::vector<ClusterScore> clusters;
  std::vector<std::size_t> order;  // cluster indices, most important first
  std::vector<Heatmap> heatmaps;
};

inline constexpr double kImportanceTieEps = 1e-3;

// Repeatedly takes the most important remaining cluster; scores within `eps`
// of it are tied and the lowest entropy wins, then the lowest index.
std::vector<std::size_t> rank_clusters(std::span<const double> importance, std::span<const double> entropies,
                                       double eps = kImportanceTieEps);

// p_y(x) - p_y(mask_image(x, hm)).
template <typename T>
double mask_importance(const PacaModel<T>& model, const RawImage& image, std::size_t label, const Heatmap& hm);

template <typename T>
ImportanceReport cluster_importance(const PacaModel<T>& model, const RawImage& image, std::size_t label,
                                    std::size_t layer, HeatmapSource source = HeatmapSource::kCluster);

// Binary PGM (P5), value round(255 h).
void write_pgm(const Heatmap& hm, const std::filesystem::path& path);

// Binary PPM (P6): 0.5 image + 0.5 blue-to-red colormap of the heatmap
// upsampled to the image size.
void write_overlay_ppm(const RawImage& image, const Heatmap& hm, const std::filesystem::path& path);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace paca
