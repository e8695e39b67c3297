#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scob/model/model.hpp"

namespace scob {

struct NamedTensor {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> payload;  // little-endian, row-major
};

/// Single-file container: the 8-byte magic "SCOBCKPT", a u32 format
/// version, a u64-length-prefixed JSON header, a u64 tensor count, then for
/// each tensor its name, dtype, rank, dims and payload (lengths as u64).
/// All integers little-endian.
struct CheckpointFile {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::string header;  // JSON object
  std::vector<NamedTensor> tensors;

  // Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  // Throws IoError for unreadable files and ConfigError for a bad magic,
  // unsupported version or truncated content.
  static CheckpointFile load(const std::filesystem::path& path);

  const NamedTensor* find(std::string_view name) const;
  const NamedTensor& at(std::string_view name) const;  // throws ConfigError
};

template <typename T>
NamedTensor to_tensor(std::string name, const nn::Matrix<T>& m);

// Throws ConfigError on dtype or rank mismatch.
template <typename T>
nn::Matrix<T> from_tensor(const NamedTensor& t);

// Appends every parameter as "model.<name>".
template <typename T>
void append_model(CheckpointFile& file, const Model<T>& model);

// Overwrites the parameters of `model` (whose config must match) from the
// "model.*" tensors. Throws ConfigError for missing or misshapen tensors.
template <typename T>
void restore_model(const CheckpointFile& file, Model<T>& model);

}  // namespace scob
