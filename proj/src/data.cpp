// SPDX-License-Identifier: Apache-2.0
#include "paca/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "paca/rng.hpp"

namespace paca {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide * 3;

struct Motif {
  int kind;  // 0 square, 1 disk, 2 stripes
  std::array<double, 3> color;
  double cy, cx, radius;
};

std::array<double, 3> hue_to_rgb(double h) {
  const double x = h * 6.0;
  const int sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  switch (sector) {
    case 0: return {1, f, 0};
    case 1: return {1 - f, 1, 0};
    case 2: return {0, 1, f};
    case 3: return {0, 1 - f, 1};
    case 4: return {f, 0, 1};
    default: return {1, 0, 1 - f};
  }
}

bool inside(const Motif& m, double y, double x) {
  const double dy = y - m.cy, dx = x - m.cx;
  switch (m.kind) {
    case 0: return std::abs(dy) <= m.radius && std::abs(dx) <= m.radius;
    case 1: return dy * dy + dx * dx <= m.radius * m.radius;
    default: {
      if (std::abs(dy) > m.radius || std::abs(dx) > m.radius) return false;
      return static_cast<long>(std::floor(y)) % 2 == 0;
    }
  }
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size()) throw DataError("dataset: image and label counts differ");
  const std::size_t expect = height * width * channels;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != expect) throw DataError("dataset: image " + std::to_string(i) + " has wrong size");
    if (labels[i] >= class_count) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                      " is out of range for " + std::to_string(class_count) + " classes");
    }
  }
}

void read_cifar_file(const std::filesystem::path& file, CifarVariant variant, Dataset& out,
                     std::optional<std::size_t> limit) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cifar: missing file " + file.string());
  const std::size_t label_bytes = variant == CifarVariant::kC100 ? 2 : 1;
  const std::size_t record = label_bytes + kCifarPixels;
  const std::size_t classes = variant == CifarVariant::kC100 ? 100 : 10;
  std::vector<unsigned char> buf(record);
  std::size_t offset = 0;
  while (!limit || out.size() < *limit) {
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
    const auto got = static_cast<std::size_t>(is.gcount());
    if (got == 0) break;
    if (got != record) {
      throw DataError("cifar: " + file.string() + " truncated record at byte offset " + std::to_string(offset) + " (" +
                      std::to_string(got) + " of " + std::to_string(record) + " bytes)");
    }
    const std::size_t label = buf[label_bytes - 1];
    if (label >= classes) {
      throw DataError("cifar: " + file.string() + " label " + std::to_string(label) + " out of range at byte offset " +
                      std::to_string(offset));
    }
    std::vector<std::uint8_t> hwc(kCifarPixels);
    const unsigned char* px = buf.data() + label_bytes;
    constexpr std::size_t plane = kCifarSide * kCifarSide;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) hwc[p * 3 + c] = px[c * plane + p];
    out.images.push_back(std::move(hwc));
    out.labels.push_back(label);
    offset += record;
  }
}

Dataset load_cifar(const std::filesystem::path& dir, CifarVariant variant, Split split, std::optional<std::size_t> limit) {
  Dataset ds;
  ds.height = ds.width = kCifarSide;
  ds.channels = 3;
  ds.class_count = variant == CifarVariant::kC100 ? 100 : 10;
  ds.split = split;
  std::vector<std::string> files;
  if (variant == CifarVariant::kC100) {
    files.push_back(split == Split::kTrain ? "train.bin" : "test.bin");
  } else if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  for (const auto& f : files) {
    if (limit && ds.size() >= *limit) break;
    read_cifar_file(dir / f, variant, ds, limit);
  }
  ds.validate();
  return ds;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, std::size_t height, std::size_t width,
                      std::uint64_t first_sample) {
  if (classes < 2) throw DataError("synth: need at least 2 classes");
  if (height < 4 || width < 4) throw DataError("synth: images must be at least 4x4");
  Dataset ds;
  ds.height = height;
  ds.width = width;
  ds.channels = 3;
  ds.class_count = classes;
  ds.split = Split::kTrain;

  Rng layout(mix_seed(seed, 0));
  const double radius = static_cast<double>(std::min(height, width)) / 5.0;
  std::vector<Motif> motifs(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    Motif& m = motifs[c];
    m.kind = static_cast<int>(c % 3);
    m.color = hue_to_rgb(std::fmod(static_cast<double>(c) * 0.618033988749895 + layout.uniform(0, 0.05), 1.0));
    m.radius = radius;
    m.cy = layout.uniform(radius, static_cast<double>(height) - radius);
    m.cx = layout.uniform(radius, static_cast<double>(width) - radius);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t stream = first_sample + i;
    const std::size_t label = static_cast<std::size_t>(stream % classes);
    Rng rng(mix_seed(seed, stream + 1));
    Motif m = motifs[label];
    m.cy += rng.uniform(-1.0, 1.0);
    m.cx += rng.uniform(-1.0, 1.0);
    std::vector<std::uint8_t> img(height * width * 3);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const bool on = inside(m, static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5);
        for (std::size_t c = 0; c < 3; ++c) {
          const double base = on ? 40.0 + 200.0 * m.color[c] : 50.0;
          const double v = base + rng.uniform(-30.0, 30.0);
          img[(y * width + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

template <typename T>
BatchIterator<T>::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                                Augment augment)
    : ds_(&ds), batch_size_(batch_size), seed_(seed), shuffle_(shuffle), augment_(augment) {
  if (batch_size == 0) throw DataError("batch size must be >= 1");
  if (ds.size() == 0) throw DataError("cannot iterate an empty dataset");
  start_epoch();
}

template <typename T>
void BatchIterator<T>::start_epoch() {
  order_.resize(ds_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_) {
    Rng rng(mix_seed(seed_, epoch_));
    rng.shuffle(std::span<std::size_t>(order_));
  }
  cursor_ = 0;
}

template <typename T>
bool BatchIterator<T>::next(Batch<T>& out) {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    start_epoch();
    return false;
  }
  const std::size_t b = std::min(batch_size_, order_.size() - cursor_);
  const std::size_t h = ds_->height, w = ds_->width, ch = ds_->channels;
  const std::size_t per = h * w * ch;
  out.images = Tensor<T>(Shape{b, h, w, ch});
  out.labels.assign(b, 0);
  out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                     order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + b));
  auto dst = out.images.data();
  Rng aug(mix_seed(mix_seed(seed_, epoch_), 0x9e37 + cursor_));
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t row = out.indices[i];
    const auto& px = ds_->images[row];
    out.labels[i] = ds_->labels[row];
    const bool flip = augment_.flip && aug.below(2) == 1;
    long dy = 0, dx = 0;
    if (augment_.pad_crop) {
      dy = static_cast<long>(aug.below(9)) - 4;
      dx = static_cast<long>(aug.below(9)) - 4;
    }
    T* o = dst.data() + i * per;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const long sy = static_cast<long>(y) + dy;
        long sx = static_cast<long>(flip ? w - 1 - x : x) + dx;
        const bool valid = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
        for (std::size_t c = 0; c < ch; ++c) {
          const std::uint8_t v = valid ? px[(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * ch + c] : 0;
          o[(y * w + x) * ch + c] = static_cast<T>(normalize_pixel(v));
        }
      }
    }
  }
  cursor_ += b;
  return true;
}

template <typename T>
Tensor<T> image_tensor(const Dataset& ds, std::size_t index) {
  const auto& px = ds.images.at(index);
  Tensor<T> t(Shape{ds.height, ds.width, ds.channels});
  for (std::size_t i = 0; i < px.size(); ++i) t[i] = static_cast<T>(normalize_pixel(px[i]));
  return t;
}

template <typename T>
Tensor<T> normalize_image(const std::vector<float>& raw, std::size_t height, std::size_t width, std::size_t channels) {
  if (raw.size() != height * width * channels) throw ShapeError("normalize_image: size does not match geometry");
  Tensor<T> t(Shape{height, width, channels});
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>((raw[i] / 255.0f - kPixelMean) / kPixelStd);
  return t;
}

template class BatchIterator<float>;
template class BatchIterator<double>;
template Tensor<float> image_tensor<float>(const Dataset&, std::size_t);
template Tensor<double> image_tensor<double>(const Dataset&, std::size_t);
template Tensor<float> normalize_image<float>(const std::vector<float>&, std::size_t, std::size_t, std::size_t);
template Tensor<double> normalize_image<double>(const std::vector<float>&, std::size_t, std::size_t, std::size_t);

}  // namespace paca
