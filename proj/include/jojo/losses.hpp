#pragma once

#include "jojo/critic.hpp"

namespace jojo {

/// Identity-loss weights the method recommends (references that distort
/// identity get a weight in this range; 0 disables the term).
inline constexpr double kDefaultIdentityWeight = 2e3;
inline constexpr double kMaxIdentityWeight = 5e3;

struct LossConfig {
  std::vector<int> taps;  // empty -> critic default
  double id_weight = 0.0;
  bool grayscale = false;

  void validate(const CriticConfig& critic) const;
};

/// Feature-matching perceptual loss between two image batches: for each
/// image, the mean absolute difference of critic activations at every tap,
/// summed over taps; averaged over the batch. `y` may have batch 1 and is
/// then broadcast against `x`.
torch::Tensor perceptual_loss(const torch::Tensor& x, const torch::Tensor& y, const DiscriminatorParams& critic,
                              const std::vector<int>& taps);

/// Per-image variant of the above, shape [B].
torch::Tensor perceptual_loss_per_image(const torch::Tensor& x, const torch::Tensor& y,
                                        const DiscriminatorParams& critic, const std::vector<int>& taps);

/// Same loss against precomputed target activations (batch 1 or B).
torch::Tensor perceptual_loss_to(const FeatureStack& x_features, const FeatureStack& y_features);

/// Every channel replaced by the per-pixel channel mean.
torch::Tensor grayscale(const torch::Tensor& images);

/// Face-embedding network F: critic trunk up to `tap`, average-pooled to a
/// `pool` x `pool` grid, flattened, optionally projected by a linear head,
/// then L2-normalized.
struct EmbeddingParams {
  DiscriminatorParams trunk;
  int tap = 2;
  int pool = 2;
  torch::Tensor head;  // [De, features] or undefined

  std::int64_t dim() const;
  EmbeddingParams to(torch::Dtype dtype) const;
};

struct EmbeddingConfig {
  int tap = 2;
  int pool = 2;
  int head_dim = 0;            // 0 -> no head, pooled critic features only
  int head_iterations = 300;   // ignored without a head
  int batch = 32;
  double learning_rate = 1e-2;
  double temperature = 0.1;
  std::uint64_t seed = 0;
};

/// Unit-norm embeddings, shape [B, De].
torch::Tensor embed(const torch::Tensor& images, const EmbeddingParams& params);

/// 1 - cosine similarity of the embeddings of grayscaled inputs, averaged
/// over the batch. Range [0, 2].
torch::Tensor identity_loss(const torch::Tensor& a, const torch::Tensor& b, const EmbeddingParams& params);

/// Random crop-and-resize plus brightness jitter, used to build positive
/// pairs for the embedding head.
torch::Tensor augment(const torch::Tensor& images, torch::Generator& rng);

/// Builds the embedding from a pretrained critic. With a head, the head is
/// trained by instance classification over augmented views of the corpus.
EmbeddingParams train_embedding(const torch::Tensor& corpus, const DiscriminatorParams& critic,
                                const EmbeddingConfig& config);

void store_embedding(Archive& archive, const EmbeddingParams& params, const std::string& prefix = "embedding");
EmbeddingParams load_embedding(const Archive& archive, const std::string& prefix = "embedding");

}  // namespace jojo
