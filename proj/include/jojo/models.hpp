#pragma once

#include "jojo/archive.hpp"
#include "jojo/inversion.hpp"
#include "jojo/losses.hpp"

#include <filesystem>
#include <optional>

namespace jojo {

/// Pretrained base pair as stored on disk (kind "base").
struct BaseModel {
  GeneratorParams generator;
  DiscriminatorParams critic;
  std::optional<EmbeddingParams> embedding;

  /// Stored embedding, or pooled critic features when none was stored.
  EmbeddingParams identity_embedding() const;
  BaseModel to(torch::Dtype dtype) const;

  Archive to_archive() const;
  static BaseModel from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static BaseModel load(const std::filesystem::path& path);
};

void save_encoder(const std::filesystem::path& path, const EncoderParams& enc);
EncoderParams load_encoder(const std::filesystem::path& path);

}  // namespace jojo
