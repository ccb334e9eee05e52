// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image classification datasets held as 8-bit HWC pixels, plus a seeded
// mini-batch iterator that normalizes to floats.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "paca/tensor.hpp"

namespace paca {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CifarVariant { kC10, kC100 };
enum class Split { kTrain, kTest };

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::size_t class_count = 0;
  Split split = Split::kTrain;
  std::vector<std::vector<std::uint8_t>> images;  // each height*width*channels, HWC
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  // Throws DataError if labels or image sizes are inconsistent.
  void validate() const;
};

// Reads the standard CIFAR binary batches from `dir`:
//   C10:  data_batch_{1..5}.bin / test_batch.bin, records <label><3072 px>
//   C100: train.bin / test.bin, records <coarse><fine><3072 px>
// Pixels are stored channel-planar (1024 R, 1024 G, 1024 B) and converted to
// HWC. C100 keeps the fine label. `limit` caps the number of records read.
Dataset load_cifar(const std::filesystem::path& dir, CifarVariant variant, Split split,
                   std::optional<std::size_t> limit = std::nullopt);

// Decodes one batch file; exposed for fixture tests.
void read_cifar_file(const std::filesystem::path& file, CifarVariant variant, Dataset& out,
                     std::optional<std::size_t> limit = std::nullopt);

// Deterministic toy dataset. The seed fixes each class's shape (square, disk
// or stripes), color and position. Sample i is drawn from stream
// first_sample + i with label (first_sample + i) % classes, so disjoint
// stream ranges give disjoint samples of the same classes.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, std::size_t height, std::size_t width,
                      std::uint64_t first_sample = 0);

// First sample stream of the synthetic test split.
inline constexpr std::uint64_t kSynthTestStream = std::uint64_t(1) << 32;

inline constexpr float kPixelMean = 0.5f;
inline constexpr float kPixelStd = 0.5f;

inline float normalize_pixel(std::uint8_t v) { return (static_cast<float>(v) / 255.0f - kPixelMean) / kPixelStd; }

template <typename T>
struct Batch {
  Tensor<T> images;  // [B, H, W, C], normalized
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // dataset rows
};

struct Augment {
  bool flip = false;      // random horizontal flip
  bool pad_crop = false;  // zero-pad 4 then random crop back to size
};

// Batches over a reshuffled permutation every epoch; the permutation depends
// only on (seed, epoch). The final short batch is kept.
template <typename T>
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle = true,
                Augment augment = {});

  // Returns false at the end of the epoch and starts the next one.
  bool next(Batch<T>& out);
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (ds_->size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  void start_epoch();

  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  Augment augment_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// One normalized image [H, W, C], no augmentation.
template <typename T>
Tensor<T> image_tensor(const Dataset& ds, std::size_t index);

// Normalized [H, W, C] tensor from raw HWC bytes or raw 0..255 floats.
template <typename T>
Tensor<T> normalize_image(const std::vector<float>& raw, std::size_t height, std::size_t width, std::size_t channels);

}  // namespace paca
