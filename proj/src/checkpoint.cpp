// SPDX-License-Identifier: Apache-2.0
#include "paca/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <vector>

namespace paca {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'A', 'C', 'A'};

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}

  template <typename U>
  void uint(U v) {
    std::array<char, sizeof(U)> bytes;
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(bytes.data(), bytes.size());
  }
  void raw(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename U>
  U uint(const char* what) {
    std::array<unsigned char, sizeof(U)> bytes;
    read(reinterpret_cast<char*>(bytes.data()), bytes.size(), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
  }

  void read(char* p, std::size_t n, const char* what) {
    const auto at = offset_;
    is_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw CheckpointError(CheckpointErrorKind::kTruncated,
                            path_ + ": truncated while reading " + what + " at byte " + std::to_string(at));
    }
    offset_ += n;
  }

  bool at_end() { return is_.peek() == std::ifstream::traits_type::eof(); }
  std::size_t offset() const { return offset_; }

 private:
  std::ifstream& is_;
  std::string path_;
  std::size_t offset_ = 0;
};

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open checkpoint " + path.string());
  return is;
}

std::uint64_t read_header(Reader& r, const std::string& path) {
  std::array<char, 4> magic{};
  r.read(magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw CheckpointError(CheckpointErrorKind::kBadMagic, path + ": not a PACA checkpoint");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::kBadVersion,
                          path + ": unsupported checkpoint version " + std::to_string(version));
  }
  return r.uint<std::uint64_t>("config hash");
}

}  // namespace

std::string_view checkpoint_error_name(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::kIo: return "io";
    case CheckpointErrorKind::kBadMagic: return "bad-magic";
    case CheckpointErrorKind::kBadVersion: return "bad-version";
    case CheckpointErrorKind::kConfigMismatch: return "config-mismatch";
    case CheckpointErrorKind::kTensorCountMismatch: return "tensor-count-mismatch";
    case CheckpointErrorKind::kNameMismatch: return "name-mismatch";
    case CheckpointErrorKind::kShapeMismatch: return "shape-mismatch";
    case CheckpointErrorKind::kTruncated: return "truncated";
    case CheckpointErrorKind::kTrailingBytes: return "trailing-bytes";
  }
  return "?";
}

CheckpointError::CheckpointError(CheckpointErrorKind kind, const std::string& detail)
    : std::runtime_error("checkpoint " + std::string(checkpoint_error_name(kind)) + ": " + detail), kind_(kind) {}

template <typename T>
void save_checkpoint(const PacaModel<T>& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError(CheckpointErrorKind::kIo, "cannot write checkpoint " + path.string());
  Writer w(os);
  w.raw(kMagic.data(), kMagic.size());
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(model.config().hash());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, t] : model.params()) {
    if (name.size() > 0xffff) throw CheckpointError(CheckpointErrorKind::kIo, "parameter name too long: " + name);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape().dims()) w.uint<std::uint64_t>(d);
    for (T v : t.data()) w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  os.flush();
  if (!os) throw CheckpointError(CheckpointErrorKind::kIo, "write failed for " + path.string());
}

template <typename T>
PacaModel<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream is = open_for_read(path);
  const std::string where = path.string();
  Reader r(is, where);
  const std::uint64_t hash = read_header(r, where);
  if (hash != cfg.hash()) {
    throw CheckpointError(CheckpointErrorKind::kConfigMismatch,
                          where + ": checkpoint was written for a different model config (" + cfg.canonical() + ")");
  }
  PacaModel<T> model = build_model<T>(cfg, 0);
  const auto count = r.uint<std::uint32_t>("tensor count");
  if (count != model.params().size()) {
    throw CheckpointError(CheckpointErrorKind::kTensorCountMismatch,
                          where + ": " + std::to_string(count) + " tensors, model has " +
                              std::to_string(model.params().size()));
  }
  for (auto& [name, t] : model.params()) {
    const auto len = r.uint<std::uint16_t>("name length");
    std::string got(len, '\0');
    r.read(got.data(), len, "name");
    if (got != name) {
      throw CheckpointError(CheckpointErrorKind::kNameMismatch, where + ": expected tensor '" + name + "', found '" + got + "'");
    }
    const auto rank = r.uint<std::uint8_t>("rank");
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < rank; ++i) dims.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>("extent")));
    if (dims != t.shape().dims()) {
      std::string shape = "[";
      for (std::size_t i = 0; i < dims.size(); ++i) shape += (i ? "," : "") + std::to_string(dims[i]);
      throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                            where + ": tensor '" + name + "' has shape " + shape + "], expected " + t.shape().to_string());
    }
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<T>(std::bit_cast<float>(r.uint<std::uint32_t>("payload")));
    }
  }
  if (!r.at_end()) {
    throw CheckpointError(CheckpointErrorKind::kTrailingBytes,
                          where + ": unexpected data after byte " + std::to_string(r.offset()));
  }
  return model;
}

std::uint64_t checkpoint_config_hash(const std::filesystem::path& path) {
  std::ifstream is = open_for_read(path);
  Reader r(is, path.string());
  return read_header(r, path.string());
}

template void save_checkpoint(const PacaModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const PacaModel<double>&, const std::filesystem::path&);
template PacaModel<float> load_checkpoint<float>(const std::filesystem::path&, const ModelConfig&);
template PacaModel<double> load_checkpoint<double>(const std::filesystem::path&, const ModelConfig&);

}  // namespace paca
