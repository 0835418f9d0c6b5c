#pragma once

#include "jojo/common.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace jojo {

/// Architecture of the style-based generator.
///
/// The synthesis trunk has one block per octave from 4x4 up to `resolution`;
/// every block carries two modulated 3x3 convolutions, so the number of style
/// layers is twice the block count. The style vector of a layer has one entry
/// per input channel of its convolution, and the skip-connected toRGB of a
/// block reuses the style of the block's second convolution.
struct GeneratorConfig {
  int resolution = 64;
  int z_dim = 64;
  int w_dim = 64;
  int mapping_layers = 3;
  double mapping_lr_mul = 0.01;
  bool mapping_linear = false;  // identity activation in the mapping net
  std::vector<int> channels;    // per block; empty -> default widths

  int blocks() const;
  int num_layers() const { return 2 * blocks(); }
  int block_channels(int block) const;
  int style_dim(int layer) const;
  std::vector<int> style_dims() const;
  int layer_resolution(int layer) const;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);

  /// Desk-scale default: 64x64, 10 style layers, 64-d latents.
  static GeneratorConfig desk();
  /// Smallest useful shape (8x8, 4 style layers), for gradient checks.
  static GeneratorConfig tiny();
  static int default_width(int resolution);

  bool operator==(const GeneratorConfig&) const = default;
};

/// Parameter snapshot of mapping net, style heads and synthesis trunk,
/// including the fixed per-layer noise buffers.
struct GeneratorParams {
  GeneratorConfig config;
  TensorMap tensors;
  std::int64_t trained_steps = 0;

  const torch::Tensor& at(const std::string& name) const;
  torch::Dtype dtype() const;
  GeneratorParams to(torch::Dtype dtype) const;
  GeneratorParams clone(bool requires_grad = false) const;
  std::string hash() const { return hash_tensors(tensors); }
  /// Names of trainable tensors (everything except noise buffers).
  std::vector<std::string> trainable_names() const;
  bool same_architecture(const GeneratorParams& other) const;
};

GeneratorParams init_generator(const GeneratorConfig& config, std::uint64_t seed,
                               torch::Dtype dtype = torch::kFloat32);

/// Per-layer style vectors. Each layer is [B, style_dim(l)]. `w_plus`, when
/// present, holds the per-layer W vectors the styles were computed from; it is
/// what W-space mixing operates on.
struct StyleCode {
  std::vector<torch::Tensor> layers;
  std::vector<torch::Tensor> w_plus;

  std::int64_t batch() const { return layers.empty() ? 0 : layers.front().size(0); }
  std::size_t num_layers() const { return layers.size(); }
  StyleCode select(std::int64_t index) const;  // keeps a batch dim of 1
  StyleCode repeat(std::int64_t n) const;
  StyleCode detach() const;
  static StyleCode cat(const std::vector<StyleCode>& codes);
};

/// Per-layer intermediate activations of the synthesis trunk (or the critic).
struct FeatureStack {
  std::vector<torch::Tensor> layers;
};

struct SynthesisResult {
  torch::Tensor image;  // [B,3,R,R], tanh-bounded
  FeatureStack features;
};

torch::Tensor map_latent(const torch::Tensor& z, const GeneratorParams& params);
StyleCode style_from_w(const torch::Tensor& w, const GeneratorParams& params);
/// Per-layer variant: `w_plus[l]` feeds style head l.
StyleCode style_from_w_plus(const std::vector<torch::Tensor>& w_plus, const GeneratorParams& params);

SynthesisResult synthesize(const StyleCode& s, const GeneratorParams& params);

/// Runs both trunks side by side, replacing each selected layer's output in
/// both trunks with (1-alpha)*A + alpha*B. The skip-connected RGB output is
/// always blended. `layers` selects blended layers; empty means all.
torch::Tensor synthesize_interpolated(const StyleCode& s, const GeneratorParams& params_a,
                                      const GeneratorParams& params_b, double alpha,
                                      const std::vector<bool>& layers = {});

struct StyleMoments {
  StyleCode mean;      // batch 1, includes w_plus = mean W per layer
  StyleCode variance;  // per-entry sample variance
  std::int64_t samples = 0;
};

inline constexpr std::int64_t kMeanStyleSamples = 10000;

StyleMoments style_moments(const GeneratorParams& params, std::int64_t n, std::uint64_t seed);
StyleCode mean_style(const GeneratorParams& params, std::int64_t n = kMeanStyleSamples, std::uint64_t seed = 0);

torch::Tensor sample_z(std::int64_t n, const GeneratorConfig& config, torch::Generator& rng,
                       torch::Dtype dtype = torch::kFloat32);

/// Generator round trip through the common checkpoint archive.
struct Archive;
void store_generator(Archive& archive, const GeneratorParams& params, const std::string& prefix = "generator");
GeneratorParams load_generator(const Archive& archive, const std::string& prefix = "generator");

}  // namespace jojo
