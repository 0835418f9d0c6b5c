#include "jojo/losses.hpp"

#include "jojo/log.hpp"

#include "jojo/archive.hpp"
#include "jojo/image.hpp"

namespace jojo {

namespace F = torch::nn::functional;

void LossConfig::validate(const CriticConfig& critic) const {
  require(id_weight >= 0.0 && id_weight <= kMaxIdentityWeight, "identity weight must lie in [0, 5e3]");
  for (int t : taps) require(t >= 0 && t < critic.resblocks(), "loss tap " + std::to_string(t) + " out of range");
}

torch::Tensor perceptual_loss_per_image(const torch::Tensor& x, const torch::Tensor& y,
                                        const DiscriminatorParams& critic, const std::vector<int>& taps) {
  const auto xb = as_batch(x), yb = as_batch(y);
  require(xb.sizes().slice(1) == yb.sizes().slice(1), "perceptual_loss: images differ in resolution");
  require(yb.size(0) == 1 || yb.size(0) == xb.size(0), "perceptual_loss: batch sizes do not broadcast");
  const auto fx = critic_features(xb, critic, taps);
  const auto fy = critic_features(yb, critic, taps);
  torch::Tensor total;
  for (std::size_t i = 0; i < fx.layers.size(); ++i) {
    const auto d = (fx.layers[i] - fy.layers[i]).abs().flatten(1).mean(1);
    total = total.defined() ? total + d : d;
  }
  return total;
}

torch::Tensor perceptual_loss(const torch::Tensor& x, const torch::Tensor& y, const DiscriminatorParams& critic,
                              const std::vector<int>& taps) {
  return perceptual_loss_per_image(x, y, critic, taps).mean();
}

torch::Tensor perceptual_loss_to(const FeatureStack& x_features, const FeatureStack& y_features) {
  require(x_features.layers.size() == y_features.layers.size(), "perceptual_loss: tap count mismatch");
  torch::Tensor total;
  for (std::size_t i = 0; i < x_features.layers.size(); ++i) {
    const auto d = (x_features.layers[i] - y_features.layers[i]).abs().flatten(1).mean(1);
    total = total.defined() ? total + d : d;
  }
  return total.mean();
}

torch::Tensor grayscale(const torch::Tensor& images) {
  const bool single = images.dim() == 3;
  const auto x = as_batch(images);
  const auto g = x.mean(1, true).expand_as(x).contiguous();
  return single ? g.squeeze(0) : g;
}

std::int64_t EmbeddingParams::dim() const {
  if (head.defined()) return head.size(0);
  return trunk.config.width(tap + 1) * pool * pool;
}

EmbeddingParams EmbeddingParams::to(torch::Dtype dtype) const {
  EmbeddingParams p{trunk.to(dtype), tap, pool, head.defined() ? head.detach().to(dtype) : torch::Tensor()};
  return p;
}

namespace {

torch::Tensor embed_raw(const torch::Tensor& images, const EmbeddingParams& params) {
  const auto f = critic_features(images, params.trunk, {params.tap}).layers.front();
  auto v = F::adaptive_avg_pool2d(f, F::AdaptiveAvgPool2dFuncOptions(params.pool)).flatten(1);
  if (params.head.defined()) v = torch::mm(v, params.head.t());
  return v;
}

}  // namespace

torch::Tensor embed(const torch::Tensor& images, const EmbeddingParams& params) {
  return F::normalize(embed_raw(as_batch(images), params), F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

torch::Tensor identity_loss(const torch::Tensor& a, const torch::Tensor& b, const EmbeddingParams& params) {
  const auto ab = as_batch(a), bb = as_batch(b);
  require(ab.sizes() == bb.sizes(), "identity_loss: image batches differ in shape");
  const auto ea = embed(grayscale(ab), params);
  const auto eb = embed(grayscale(bb), params);
  return (1.0 - (ea * eb).sum(1)).clamp(0.0, 2.0).mean();
}

torch::Tensor augment(const torch::Tensor& images, torch::Generator& rng) {
  const auto x = as_batch(images);
  const auto n = x.size(0), res = x.size(2);
  const auto opt = options_for(torch::kFloat64);
  // Crop scale in [0.8, 1], offset anywhere inside the image.
  const auto scale = torch::rand({n}, rng, opt) * 0.2 + 0.8;
  const auto off_x = (torch::rand({n}, rng, opt) * 2 - 1) * (1 - scale);
  const auto off_y = (torch::rand({n}, rng, opt) * 2 - 1) * (1 - scale);
  const auto gain = torch::rand({n}, rng, opt) * 0.2 + 0.9;
  auto theta = torch::zeros({n, 2, 3}, opt);
  theta.select(2, 0).select(1, 0).copy_(scale);
  theta.select(2, 1).select(1, 1).copy_(scale);
  theta.select(2, 2).select(1, 0).copy_(off_x);
  theta.select(2, 2).select(1, 1).copy_(off_y);
  const auto grid = F::affine_grid(theta.to(x.scalar_type()), {n, 3, res, res}, false);
  auto out = F::grid_sample(x, grid, F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  return ((out + 1) * gain.to(x.scalar_type()).view({n, 1, 1, 1}) - 1).clamp(-1, 1);
}

EmbeddingParams train_embedding(const torch::Tensor& corpus, const DiscriminatorParams& critic,
                                const EmbeddingConfig& config) {
  require(config.tap >= 0 && config.tap < critic.config.resblocks(), "train_embedding: tap out of range");
  require(config.pool >= 1, "train_embedding: pool must be >= 1");
  EmbeddingParams params{critic.clone(false), config.tap, config.pool, {}};
  if (config.head_dim <= 0) return params;

  const auto images = as_batch(corpus);
  require(images.size(0) >= 2, "train_embedding: need at least two corpus images");
  auto rng = make_rng(config.seed);
  const auto features = params.trunk.config.width(config.tap + 1) * config.pool * config.pool;
  auto head = (torch::randn({config.head_dim, features}, rng, options_for(critic.dtype())) /
               std::sqrt(static_cast<double>(features)))
                  .set_requires_grad(true);
  torch::optim::Adam opt({head}, torch::optim::AdamOptions(config.learning_rate));
  const auto batch = std::min<std::int64_t>(config.batch, images.size(0));
  for (int it = 0; it < config.head_iterations; ++it) {
    const auto idx = torch::randperm(images.size(0), rng, torch::kLong).slice(0, 0, batch);
    const auto x = images.index_select(0, idx);
    torch::Tensor va, vb;
    {
      torch::NoGradGuard no_grad;
      params.head = torch::Tensor();
      va = embed_raw(augment(x, rng), params);
      vb = embed_raw(augment(x, rng), params);
    }
    const auto ea = F::normalize(torch::mm(va, head.t()), F::NormalizeFuncOptions().dim(1));
    const auto eb = F::normalize(torch::mm(vb, head.t()), F::NormalizeFuncOptions().dim(1));
    // Each view must pick out its own instance among the batch.
    const auto logits = torch::mm(ea, eb.t()) / config.temperature;
    const auto target = torch::arange(batch, torch::kLong);
    const auto loss = 0.5 * (F::cross_entropy(logits, target) + F::cross_entropy(logits.t(), target));
    opt.zero_grad();
    loss.backward();
    opt.step();
    if ((it + 1) % 100 == 0) log_info("embedding head ", it + 1, "/", config.head_iterations, " loss ", loss.item<double>());
  }
  params.head = head.detach();
  return params;
}

void store_embedding(Archive& archive, const EmbeddingParams& params, const std::string& prefix) {
  store_critic(archive, params.trunk, prefix + "_trunk");
  if (params.head.defined()) archive.tensors[prefix + "_head/weight"] = params.head;
  archive.meta[prefix] = {{"tap", params.tap}, {"pool", params.pool}, {"head", params.head.defined()}};
}

EmbeddingParams load_embedding(const Archive& archive, const std::string& prefix) {
  if (!archive.meta.contains(prefix)) throw InvalidInput("checkpoint has no '" + prefix + "' section");
  const auto& m = archive.meta.at(prefix);
  EmbeddingParams p{load_critic(archive, prefix + "_trunk"), m.at("tap").get<int>(), m.at("pool").get<int>(), {}};
  if (m.value("head", false)) p.head = archive.tensors.at(prefix + "_head/weight");
  return p;
}

}  // namespace jojo
