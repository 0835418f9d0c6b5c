#pragma once

#include "jojo/archive.hpp"
#include "jojo/inversion.hpp"
#include "jojo/losses.hpp"
#include "jojo/mixer.hpp"

#include <filesystem>
#include <functional>
#include <optional>

namespace jojo {

// ---------------------------------------------------------------- pretraining

inline constexpr int kMinCorpusSize = 500;

struct PretrainConfig {
  int iterations = 4000;
  int batch = 16;
  double learning_rate = 2e-3;
  double r1_gamma = 0.05;
  int r1_every = 16;
  double ema_beta = 0.999;
  double mixing_prob = 0.5;
  std::uint64_t seed = 0;
  int log_every = 50;
  int sample_every = 500;
  std::filesystem::path sample_dir;  // empty -> no sample grids
  // Called every `sample_every` steps with the EMA generator and the critic.
  std::function<void(int, const GeneratorParams&, const DiscriminatorParams&)> on_snapshot;
};

struct PretrainResult {
  GeneratorParams generator;  // exponential moving average of the trained weights
  DiscriminatorParams critic;
  std::vector<double> g_loss;
  std::vector<double> d_loss;
};

/// Adversarial pretraining of the base pair with the non-saturating logistic
/// loss and lazy R1 regularization. Refuses corpora under kMinCorpusSize.
PretrainResult pretrain_base(const torch::Tensor& corpus, const GeneratorConfig& config,
                             const PretrainConfig& train);

// ---------------------------------------------------------------- finetuning

struct TrainConfig {
  int iterations = 300;
  double learning_rate = 2e-3;
  int batch = 4;
  std::optional<LayerMask> mask;  // empty -> transfer_color_X
  MixSpace mix_space = MixSpace::S;
  double id_weight = 0.0;
  bool grayscale = false;
  bool ood_mean_code = false;
  std::optional<BlendSpec> blend;
  std::vector<int> taps;  // empty -> critic default
  std::uint64_t seed = 0;

  LayerMask resolved_mask(int num_layers) const;
  void validate(const GeneratorConfig& gen, const CriticConfig& critic) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// The deployable style mapper: finetuned generator plus provenance.
struct MapperCheckpoint {
  GeneratorParams params;
  std::string base_hash;
  TrainConfig config;
  std::vector<std::string> reference_hashes;
  std::vector<double> loss_trace;

  Archive to_archive() const;
  static MapperCheckpoint from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static MapperCheckpoint load(const std::filesystem::path& path);
};

/// Snapshot handed to observers before each optimizer step.
struct FinetuneStep {
  int iteration = 0;
  const StyleCode* codes = nullptr;      // mixed batch, references concatenated in order
  const GeneratorParams* params = nullptr;  // weights that produced `loss`
  double loss = 0;
  double perceptual = 0;
  double identity = 0;
};

struct FinetuneHooks {
  std::function<void(const FinetuneStep&)> on_step;
};

/// Thrown when the loss stops being finite; carries the state at that point.
class FinetuneDiverged : public TrainingError {
 public:
  FinetuneDiverged(const std::string& what, MapperCheckpoint state)
      : TrainingError(what), state_(std::move(state)) {}
  const MapperCheckpoint& state() const { return state_; }

 private:
  MapperCheckpoint state_;
};

std::string hash_image(const torch::Tensor& image);

/// Finetunes a copy of `base` so that every mixed code of each reference
/// renders like that reference:
///   theta_hat = argmin 1/(K*B) sum_k sum_i L(G(s_ki; theta), y_k),
/// with L the critic feature-matching loss (optionally on grayscale images)
/// plus id_weight times the identity loss against the base generator.
/// Trunk convolutions, biases, the constant input and toRGB layers are
/// optimized; noise buffers and noise strengths keep their base values.
MapperCheckpoint finetune(const GeneratorParams& base, const DiscriminatorParams& critic, const EncoderParams& enc,
                          const std::vector<torch::Tensor>& references, const TrainConfig& config,
                          const EmbeddingParams* embedding = nullptr, const FinetuneHooks& hooks = {});

/// Code each reference contributes to the training set (inverted, mean code
/// or virtual inverter, per config).
StyleCode reference_code(const torch::Tensor& reference, const GeneratorParams& base, const EncoderParams& enc,
                         const TrainConfig& config, const StyleCode* mean = nullptr);

}  // namespace jojo
