// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "PACA"            4 bytes magic
//   u32 version       = 1
//   u64 config hash   FNV-1a 64 of ModelConfig::canonical()
//   u32 tensor count
//   per tensor, in registry (name) order:
//     u16 name length, UTF-8 name bytes
//     u8 rank, rank x u64 extents
//     numel x f32 payload
//
// Models in double precision are narrowed to f32 on save.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "paca/model.hpp"

namespace paca {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorKind {
  kIo,
  kBadMagic,
  kBadVersion,
  kConfigMismatch,
  kTensorCountMismatch,
  kNameMismatch,
  kShapeMismatch,
  kTruncated,
  kTrailingBytes,
};

std::string_view checkpoint_error_name(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& detail);
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

template <typename T>
void save_checkpoint(const PacaModel<T>& model, const std::filesystem::path& path);

// Builds a model for `cfg` and fills it from `path`. The file must carry
// cfg's hash and exactly the registry's names and shapes.
template <typename T>
PacaModel<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

// Reads only the header's config hash.
std::uint64_t checkpoint_config_hash(const std::filesystem::path& path);

}  // namespace paca
