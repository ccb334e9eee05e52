// SPDX-License-Identifier: Apache-2.0
#include "paca/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "paca/data.hpp"

namespace paca {

RawImage raw_image(const Dataset& ds, std::size_t index) {
  RawImage r{ds.height, ds.width, ds.channels, {}};
  const auto& px = ds.images.at(index);
  r.pixels.assign(px.begin(), px.end());
  return r;
}

std::vector<double> min_max_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

double entropy(std::span<const double> p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

template <typename T>
std::vector<std::vector<double>> source_columns(const LayerExplanation<T>& layer, HeatmapSource source) {
  if (layer.variant != AttentionVariant::kPaca || !layer.clusters) {
    throw ExplainError("layer " + std::to_string(layer.layer) + " is a " + std::string(variant_name(layer.variant)) +
                       " layer; heatmaps need a PaCa layer");
  }
  const std::size_t n = layer.grid.size();
  if (source == HeatmapSource::kCluster) {
    const Tensor<T>& c = layer.clusters->weights;
    const std::size_t m = c.dim(1);
    std::vector<std::vector<double>> cols(m, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) cols[j][i] = static_cast<double>(c[i * m + j]);
    return cols;
  }
  const Tensor<T>& a = layer.attn;  // [h, N, M]
  const std::size_t heads = a.dim(0), m = a.dim(2);
  std::vector<std::vector<double>> cols(m, std::vector<double>(n, 0.0));
  for (std::size_t hd = 0; hd < heads; ++hd)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) cols[j][i] += static_cast<double>(a[(hd * n + i) * m + j]);
  for (auto& col : cols) {
    double s = 0;
    for (double v : col) s += v;
    if (s > 0)
      for (double& v : col) v /= s;
  }
  return cols;
}

template <typename T>
std::vector<Heatmap> extract_heatmaps(const LayerExplanation<T>& layer, HeatmapSource source) {
  const auto cols = source_columns(layer, source);
  std::vector<Heatmap> maps;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    maps.push_back({layer.grid.height, layer.grid.width, min_max_normalize(cols[j]), layer.layer, j});
  }
  return maps;
}

std::vector<double> upsample_bilinear(const Heatmap& hm, std::size_t height, std::size_t width) {
  if (hm.values.size() != hm.height * hm.width || hm.values.empty()) {
    throw ExplainError("heatmap values do not match its extents");
  }
  auto coord = [](std::size_t dst, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    const double c = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(c));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, c - static_cast<double>(i0)};
  };
  std::vector<double> out(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, fy] = coord(y, hm.height, height);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, fx] = coord(x, hm.width, width);
      const auto at = [&](std::size_t r, std::size_t c) { return hm.values[r * hm.width + c]; };
      const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
      const double bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
      out[y * width + x] = top + (bottom - top) * fy;
    }
  }
  return out;
}

RawImage mask_image(const RawImage& image, const Heatmap& hm) {
  const auto up = upsample_bilinear(hm, image.height, image.width);
  RawImage out = image;
  for (std::size_t p = 0; p < up.size(); ++p) {
    const double keep = 1.0 - up[p];
    for (std::size_t c = 0; c < image.channels; ++c) {
      float& v = out.pixels[p * image.channels + c];
      v = static_cast<float>(static_cast<double>(v) * keep);
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> to_input(const PacaModel<T>& model, const RawImage& image) {
  const ModelConfig& cfg = model.config();
  if (image.height != cfg.input_height || image.width != cfg.input_width || image.channels != cfg.input_channels) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                     std::to_string(image.channels) + " does not match the model input");
  }
  return normalize_image<T>(image.pixels, image.height, image.width, image.channels);
}

template <typename T>
Prediction to_prediction(const Tensor<T>& logits) {
  Prediction p;
  const std::size_t k = logits.numel();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double s = 0;
  p.probs.resize(k);
  for (std::size_t j = 0; j < k; ++j) s += p.probs[j] = std::exp(static_cast<double>(logits[j]) - mx);
  for (double& v : p.probs) v /= s;
  for (std::size_t j = 1; j < k; ++j)
    if (logits[j] > logits[p.top]) p.top = j;
  return p;
}

}  // namespace

template <typename T>
Prediction predict(const PacaModel<T>& model, const RawImage& image) {
  return to_prediction(forward_image(model, to_input(model, image)));
}

template <typename T>
std::vector<LayerExplanation<T>> explain_forward(const PacaModel<T>& model, const RawImage& image,
                                                 Prediction* prediction) {
  std::vector<LayerExplanation<T>> layers;
  const Tensor<T> logits = forward_image(model, to_input(model, image), &layers);
  if (prediction != nullptr) *prediction = to_prediction(logits);
  return layers;
}

std::vector<std::size_t> rank_clusters(std::span<const double> importance, std::span<const double> entropies,
                                       double eps) {
  if (importance.size() != entropies.size()) throw ExplainError("rank_clusters: size mismatch");
  std::vector<std::size_t> remaining(importance.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
  std::vector<std::size_t> order;
  while (!remaining.empty()) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i : remaining) best = std::max(best, importance[i]);
    std::size_t pick = remaining.front();
    bool found = false;
    for (std::size_t i : remaining) {
      if (importance[i] < best - eps) continue;
      if (!found || entropies[i] < entropies[pick]) pick = i;
      found = true;
    }
    order.push_back(pick);
    remaining.erase(std::find(remaining.begin(), remaining.end(), pick));
  }
  return order;
}

template <typename T>
double mask_importance(const PacaModel<T>& model, const RawImage& image, std::size_t label, const Heatmap& hm) {
  const Prediction clean = predict(model, image);
  const Prediction masked = predict(model, mask_image(image, hm));
  return clean.probs.at(label) - masked.probs.at(label);
}

template <typename T>
ImportanceReport cluster_importance(const PacaModel<T>& model, const RawImage& image, std::size_t label,
                                    std::size_t layer, HeatmapSource source) {
  Prediction clean;
  const auto layers = explain_forward(model, image, &clean);
  if (layer >= layers.size()) {
    throw ExplainError("layer " + std::to_string(layer) + " out of range; model has " + std::to_string(layers.size()));
  }
  if (label >= clean.probs.size()) throw ExplainError("label " + std::to_string(label) + " out of range");
  ImportanceReport r;
  r.layer = layer;
  r.label = label;
  r.predicted = clean.top;
  r.p_clean = clean.probs[label];
  r.misclassified = clean.top != label;
  const auto cols = source_columns(layers[layer], source);
  r.heatmaps = extract_heatmaps(layers[layer], source);
  std::vector<double> imp(cols.size()), ent(cols.size());
  for (std::size_t m = 0; m < cols.size(); ++m) {
    const Prediction masked = predict(model, mask_image(image, r.heatmaps[m]));
    imp[m] = r.p_clean - masked.probs[label];
    ent[m] = entropy(cols[m]);
  }
  r.order = rank_clusters(imp, ent);
  r.clusters.resize(cols.size());
  for (std::size_t m = 0; m < cols.size(); ++m) r.clusters[m] = {m, imp[m], ent[m], 0};
  for (std::size_t k = 0; k < r.order.size(); ++k) r.clusters[r.order[k]].rank = k;
  return r;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void write_binary(const std::filesystem::path& path, const std::string& header, const std::vector<std::uint8_t>& payload) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ExplainError("cannot write " + path.string());
  os << header;
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!os) throw ExplainError("write failed for " + path.string());
}

}  // namespace

void write_pgm(const Heatmap& hm, const std::filesystem::path& path) {
  std::vector<std::uint8_t> px(hm.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(255.0 * hm.values[i]);
  write_binary(path, "P5\n" + std::to_string(hm.width) + " " + std::to_string(hm.height) + "\n255\n", px);
}

void write_overlay_ppm(const RawImage& image, const Heatmap& hm, const std::filesystem::path& path) {
  const auto up = upsample_bilinear(hm, image.height, image.width);
  std::vector<std::uint8_t> px(image.height * image.width * 3);
  for (std::size_t p = 0; p < up.size(); ++p) {
    const double h = std::clamp(up[p], 0.0, 1.0);
    const double cmap[3] = {255.0 * h, 0.0, 255.0 * (1.0 - h)};
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = image.pixels[p * image.channels + std::min(c, image.channels - 1)];
      px[p * 3 + c] = to_byte(0.5 * base + 0.5 * cmap[c]);
    }
  }
  write_binary(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n", px);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ExplainError("cannot open " + path.string());
  std::string magic;
  GrayImage g;
  int maxval = 0;
  is >> magic >> g.width >> g.height >> maxval;
  if (magic != "P5" || !is || maxval != 255) throw ExplainError(path.string() + ": not an 8-bit binary PGM");
  is.get();
  g.pixels.resize(g.width * g.height);
  is.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != g.pixels.size()) throw ExplainError(path.string() + ": truncated PGM");
  return g;
}

#define PACA_INSTANTIATE_EXPLAIN(T)                                                                              \
  template std::vector<std::vector<double>> source_columns(const LayerExplanation<T>&, HeatmapSource);          \
  template std::vector<Heatmap> extract_heatmaps(const LayerExplanation<T>&, HeatmapSource);                    \
  template Prediction predict(const PacaModel<T>&, const RawImage&);                                            \
  template std::vector<LayerExplanation<T>> explain_forward(const PacaModel<T>&, const RawImage&, Prediction*); \
  template double mask_importance(const PacaModel<T>&, const RawImage&, std::size_t, const Heatmap&);           \
  template ImportanceReport cluster_importance(const PacaModel<T>&, const RawImage&, std::size_t, std::size_t,  \
                                               HeatmapSource);

PACA_INSTANTIATE_EXPLAIN(float)
PACA_INSTANTIATE_EXPLAIN(double)

#undef PACA_INSTANTIATE_EXPLAIN

}  // namespace paca
