#pragma once

#include "jojo/synthesis.hpp"

namespace jojo {

/// Residual discriminator. A 1x1 fromRGB feeds `resblocks()` residual blocks
/// that each halve the spatial size, followed by a two-layer classifier head.
/// Widths mirror the generator's width at each resolution.
struct CriticConfig {
  int resolution = 64;
  std::vector<int> channels;  // fromRGB width, then output width of each resblock; empty -> mirrored defaults

  int resblocks() const;
  int width(int index) const;  // index 0 = fromRGB, i+1 = output of resblock i
  int final_resolution() const { return resolution >> resblocks(); }
  /// Skips the earliest resblock and taps the rest.
  std::vector<int> default_taps() const;

  void validate() const;
  nlohmann::json to_json() const;
  static CriticConfig from_json(const nlohmann::json& j);
  static CriticConfig matching(const GeneratorConfig& gen);

  bool operator==(const CriticConfig&) const = default;
};

/// Tap indices of the full-scale 1024 critic, kept for reference.
inline const std::vector<int> kFullScaleTaps = {2, 4, 5, 6};

struct DiscriminatorParams {
  CriticConfig config;
  TensorMap tensors;
  std::int64_t trained_steps = 0;

  const torch::Tensor& at(const std::string& name) const;
  torch::Dtype dtype() const;
  DiscriminatorParams to(torch::Dtype dtype) const;
  DiscriminatorParams clone(bool requires_grad = false) const;
  std::string hash() const { return hash_tensors(tensors); }
};

DiscriminatorParams init_critic(const CriticConfig& config, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32);

/// Real/fake logit per image, shape [B].
torch::Tensor critic_score(const torch::Tensor& images, const DiscriminatorParams& params);

/// Activations after the listed resblocks, in the order given.
FeatureStack critic_features(const torch::Tensor& images, const DiscriminatorParams& params,
                             const std::vector<int>& taps);

void store_critic(Archive& archive, const DiscriminatorParams& params, const std::string& prefix = "critic");
DiscriminatorParams load_critic(const Archive& archive, const std::string& prefix = "critic");

}  // namespace jojo
