#pragma once

#include "jojo/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace jojo {

/// Single-file checkpoint: an 8-byte magic, a u32 format version, a u64
/// manifest length, the JSON manifest, then raw little-endian tensor payloads.
/// The manifest lists every tensor as {name, dtype, shape, offset, nbytes}
/// relative to the start of the payload section, next to free-form metadata
/// under "meta". Serialization is deterministic: identical contents give
/// identical bytes.
struct Archive {
  static constexpr std::string_view kMagic = "JOJOCKPT";
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  TensorMap tensors;

  /// Stores `group` under "<prefix>/<name>".
  void put(std::string_view prefix, const TensorMap& group);
  /// Returns the tensors stored under `prefix`, prefix stripped.
  TensorMap get(std::string_view prefix) const;
  bool has(std::string_view prefix) const;

  std::string to_bytes() const;
  static Archive from_bytes(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace jojo
