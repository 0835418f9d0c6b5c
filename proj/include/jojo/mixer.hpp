#pragma once

#include "jojo/synthesis.hpp"

#include <optional>
#include <string>

namespace jojo {

/// Per-layer mix weights: 1 keeps the reference entry, 0 takes the fresh
/// random entry. Values in between blend linearly. An optional per-channel
/// weight vector refines individual layers.
struct LayerMask {
  std::vector<double> layers;
  /// layer index -> one weight per style channel; overrides `layers[l]`.
  std::map<int, std::vector<double>> channels;

  std::size_t size() const { return layers.size(); }
  bool is_binary() const;
  bool all(double value) const;

  void validate(const GeneratorConfig& config) const;
  nlohmann::json to_json() const;
  static LayerMask from_json(const nlohmann::json& j);
  /// Parses a bit string such as "1111000011" (one digit per layer).
  static LayerMask from_bits(const std::string& bits);
  static LayerMask constant(std::size_t layers, double value);

  bool operator==(const LayerMask&) const = default;
};

enum class MixSpace { S, W };

std::string to_string(MixSpace space);
MixSpace mix_space_from_string(const std::string& name);

struct MixConfig {
  LayerMask mask;
  MixSpace space = MixSpace::S;
  int batch = 4;
};

/// Named presets, defined by layer fraction so they apply at any depth:
///   all_ones          every layer from the reference
///   preserve_color_C  coarse (first 40%) and fine (last 20%) layers kept
///   transfer_color_X  coarse layers kept only
///   ood_blend         inverter-blend mask: mean code at the mid layers that
///                     correspond to indices 7, 9, 11 of the 26-layer model
LayerMask mask_preset(const std::string& name, int num_layers);
std::vector<std::string> mask_preset_names();

/// Accepts a preset name or an explicit bit string.
LayerMask parse_mask(const std::string& spec, int num_layers);

/// Mixes `reference` (batch 1) with fresh random codes:
///   s_i = M * s_ref + (1 - M) * s(FC(z_i)).
/// In W mode the blend happens on per-layer W vectors before the style heads,
/// which requires `reference.w_plus`.
StyleCode mix_styles(const StyleCode& reference, const MixConfig& config, const GeneratorParams& gen,
                     torch::Generator& rng);

/// Same, with the random latents supplied by the caller ([batch, z_dim]).
StyleCode mix_styles_with(const StyleCode& reference, const LayerMask& mask, MixSpace space,
                          const GeneratorParams& gen, const torch::Tensor& z);

/// Elementwise per-layer blend M*a + (1-M)*b; exact copies where M is 0 or 1.
StyleCode blend_codes(const StyleCode& a, const StyleCode& b, const LayerMask& mask);

}  // namespace jojo
