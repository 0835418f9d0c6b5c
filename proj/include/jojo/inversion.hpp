#pragma once

#include "jojo/critic.hpp"
#include "jojo/mixer.hpp"

#include <functional>

namespace jojo {

struct EncoderConfig {
  int resolution = 64;
  int w_dim = 64;
  std::vector<int> channels;  // fromRGB width then one width per stride-2 stage; empty -> defaults

  int stages() const;  // stride-2 stages down to 4x4
  int width(int index) const;
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  static EncoderConfig matching(const GeneratorConfig& gen);
};

/// Feed-forward inverter T: strided conv backbone, a 4x4 feature grid and a
/// linear head predicting an offset from the generator's mean W.
struct EncoderParams {
  EncoderConfig config;
  TensorMap tensors;

  const torch::Tensor& at(const std::string& name) const;
  torch::Dtype dtype() const;
  EncoderParams to(torch::Dtype dtype) const;
  std::string hash() const { return hash_tensors(tensors); }
};

EncoderParams init_encoder(const EncoderConfig& config, const torch::Tensor& w_mean, std::uint64_t seed,
                           torch::Dtype dtype = torch::kFloat32);

struct TrainEncoderConfig {
  int iterations = 1500;
  int batch = 16;
  double learning_rate = 2e-3;
  double image_weight = 1.0;  // perceptual reconstruction term (needs a critic)
  int image_every = 4;        // apply the image term every n-th step
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct EncoderTrainResult {
  EncoderParams encoder;
  std::vector<double> loss_trace;
};

/// Self-supervised training on (w, G(s(w))) pairs drawn from the generator.
/// Refuses generators that were never trained.
EncoderTrainResult train_encoder(const GeneratorParams& gen, const DiscriminatorParams* critic,
                                 const TrainEncoderConfig& config);

struct Inversion {
  torch::Tensor w;                 // [B, w_dim]
  std::vector<std::string> notes;  // e.g. resize warnings
};

/// One forward pass. Inputs at another resolution are resized first and the
/// transform is recorded in `notes`.
Inversion invert(const torch::Tensor& images, const EncoderParams& enc);

enum class BlendSource { Mean, Encoder };

/// Virtual inverter: layers where `mask` is 1 keep the encoder code, layers
/// where it is 0 take the code from `source` (the mean code by default).
struct BlendSpec {
  LayerMask mask;
  BlendSource source = BlendSource::Mean;

  nlohmann::json to_json() const;
  static BlendSpec from_json(const nlohmann::json& j);
};

/// Mask of the full-scale reference blend: mean code at layers 7, 9, 11.
LayerMask full_scale_blend_mask();

StyleCode virtual_invert(const torch::Tensor& images, const EncoderParams& enc, const GeneratorParams& gen,
                         const BlendSpec& blend, const StyleCode* mean = nullptr);

struct EncoderQuality {
  double median_w_relative_error = 0;
  double median_w_relative_error_mean_code = 0;  // baseline: predict the mean W for every sample
  double psnr_encoder = 0;
  double psnr_mean_code = 0;
};

/// Held-out evaluation on fresh generator samples.
EncoderQuality evaluate_encoder(const EncoderParams& enc, const GeneratorParams& gen, int samples,
                                std::uint64_t seed);

double psnr(const torch::Tensor& a, const torch::Tensor& b);

void store_encoder(Archive& archive, const EncoderParams& params, const std::string& prefix = "encoder");
EncoderParams load_encoder(const Archive& archive, const std::string& prefix = "encoder");

}  // namespace jojo
