#include "jojo/finetuner.hpp"

#include "jojo/log.hpp"

#include <chrono>
#include <cmath>

#include "jojo/image.hpp"

namespace jojo {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------- pretraining

namespace {

std::vector<torch::Tensor> trainable(GeneratorParams& g) {
  std::vector<torch::Tensor> out;
  for (const auto& name : g.trainable_names()) out.push_back(g.tensors.at(name));
  return out;
}

std::vector<torch::Tensor> all_tensors(TensorMap& m) {
  std::vector<torch::Tensor> out;
  for (auto& [_, t] : m) out.push_back(t);
  return out;
}

void set_requires_grad(TensorMap& m, bool on) {
  for (auto& [_, t] : m) t.set_requires_grad(on);
}

// Random codes with style-mixing regularization: with probability
// `mixing_prob` the layers after a random crossover use a second latent.
StyleCode random_codes(const GeneratorParams& g, std::int64_t n, double mixing_prob, torch::Generator& rng) {
  const auto w1 = map_latent(sample_z(n, g.config, rng, g.dtype()), g);
  const int L = g.config.num_layers();
  const double u = torch::rand({1}, rng, options_for(torch::kFloat64)).item<double>();
  const int cut = static_cast<int>(torch::randint(1, L, {1}, rng, torch::kLong).item<std::int64_t>());
  if (u >= mixing_prob) return style_from_w(w1, g);
  const auto w2 = map_latent(sample_z(n, g.config, rng, g.dtype()), g);
  std::vector<torch::Tensor> w_plus;
  for (int l = 0; l < L; ++l) w_plus.push_back(l < cut ? w1 : w2);
  return style_from_w_plus(w_plus, g);
}

}  // namespace

PretrainResult pretrain_base(const torch::Tensor& corpus, const GeneratorConfig& config, const PretrainConfig& train) {
  config.validate();
  const auto images = as_batch(corpus);
  if (images.size(0) < kMinCorpusSize)
    throw TrainingError("pretrain: corpus has " + std::to_string(images.size(0)) + " images, need at least " +
                        std::to_string(kMinCorpusSize));
  check_image(images, config.resolution, "pretrain corpus");
  require(train.iterations >= 1 && train.batch >= 1, "pretrain: iterations and batch must be >= 1");

  auto rng = make_rng(train.seed);
  auto gen = init_generator(config, train.seed, images.scalar_type());
  auto critic = init_critic(CriticConfig::matching(config), train.seed + 1, images.scalar_type());
  auto ema = gen.clone(false);
  gen = gen.clone(true);
  critic = critic.clone(true);

  auto g_params = trainable(gen);
  auto d_params = all_tensors(critic.tensors);
  torch::optim::Adam g_opt(g_params, torch::optim::AdamOptions(train.learning_rate).betas({0.0, 0.99}).eps(1e-8));
  // Lazy regularization: rescale the critic's Adam hyperparameters.
  const double c = static_cast<double>(train.r1_every) / (train.r1_every + 1);
  torch::optim::Adam d_opt(d_params, torch::optim::AdamOptions(train.learning_rate * c)
                                         .betas({0.0, std::pow(0.99, c)})
                                         .eps(1e-8));

  const auto fixed_z = sample_z(16, config, rng, gen.dtype());
  PretrainResult result;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < train.iterations; ++it) {
    const auto idx = torch::randint(0, images.size(0), {train.batch}, rng, torch::kLong);
    const auto real = images.index_select(0, idx);

    // Critic step.
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = synthesize(random_codes(gen, train.batch, train.mixing_prob, rng), gen).image;
    }
    auto d_loss = F::softplus(critic_score(fake, critic)).mean() + F::softplus(-critic_score(real, critic)).mean();
    if (train.r1_every > 0 && it % train.r1_every == 0) {
      const auto r = real.detach().requires_grad_(true);
      const auto score = critic_score(r, critic);
      const auto grad = torch::autograd::grad({score.sum()}, {r}, {}, true, true)[0];
      d_loss = d_loss + grad.square().sum({1, 2, 3}).mean() * (train.r1_gamma * 0.5 * train.r1_every);
    }
    d_opt.zero_grad();
    d_loss.backward();
    d_opt.step();

    // Generator step; critic weights frozen so only generator grads are formed.
    set_requires_grad(critic.tensors, false);
    const auto gen_images = synthesize(random_codes(gen, train.batch, train.mixing_prob, rng), gen).image;
    const auto g_loss = F::softplus(-critic_score(gen_images, critic)).mean();
    g_opt.zero_grad();
    g_loss.backward();
    g_opt.step();
    set_requires_grad(critic.tensors, true);

    {
      torch::NoGradGuard no_grad;
      for (auto& [name, t] : ema.tensors) t.lerp_(gen.tensors.at(name), 1.0 - train.ema_beta);
    }
    result.g_loss.push_back(g_loss.item<double>());
    result.d_loss.push_back(d_loss.item<double>());
    if (!std::isfinite(result.g_loss.back()) || !std::isfinite(result.d_loss.back()))
      throw TrainingError("pretrain: non-finite loss at iteration " + std::to_string(it));

    if (train.log_every > 0 && (it + 1) % train.log_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log_info("pretrain ", it + 1, "/", train.iterations, " d ", result.d_loss.back(), " g ", result.g_loss.back(), " (",
               secs / (it + 1), " s/it)");
    }
    if (train.sample_every > 0 && (it + 1) % train.sample_every == 0) {
      torch::NoGradGuard no_grad;
      if (!train.sample_dir.empty()) {
        const auto samples = synthesize(style_from_w(map_latent(fixed_z, ema), ema), ema).image;
        write_png(train.sample_dir / ("samples_" + std::to_string(it + 1) + ".png"), make_grid(samples, 4));
      }
      if (train.on_snapshot) {
        auto snapshot = critic.clone(false);
        ema.trained_steps = snapshot.trained_steps = it + 1;
        train.on_snapshot(it + 1, ema, snapshot);
      }
    }
  }
  ema.trained_steps = train.iterations;
  critic = critic.clone(false);
  critic.trained_steps = train.iterations;
  result.generator = std::move(ema);
  result.critic = std::move(critic);
  return result;
}

// ---------------------------------------------------------------- TrainConfig

LayerMask TrainConfig::resolved_mask(int num_layers) const {
  return mask ? *mask : mask_preset("transfer_color_X", num_layers);
}

void TrainConfig::validate(const GeneratorConfig& gen, const CriticConfig& critic) const {
  require(iterations >= 1, "iterations must be >= 1");
  require(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  require(batch >= 1, "batch must be >= 1");
  resolved_mask(gen.num_layers()).validate(gen);
  if (blend) blend->mask.validate(gen);
  require(!(ood_mean_code && blend), "ood_mean_code and blend are mutually exclusive");
  LossConfig{taps, id_weight, grayscale}.validate(critic);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"iterations", iterations},   {"learning_rate", learning_rate},
                      {"batch", batch},             {"mix_space", to_string(mix_space)},
                      {"id_weight", id_weight},     {"grayscale", grayscale},
                      {"ood_mean_code", ood_mean_code}, {"taps", taps},
                      {"seed", seed}};
  j["mask"] = mask ? mask->to_json() : nlohmann::json(nullptr);
  j["blend"] = blend ? blend->to_json() : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch = j.value("batch", c.batch);
  c.mix_space = mix_space_from_string(j.value("mix_space", std::string("S")));
  c.id_weight = j.value("id_weight", c.id_weight);
  c.grayscale = j.value("grayscale", c.grayscale);
  c.ood_mean_code = j.value("ood_mean_code", c.ood_mean_code);
  c.taps = j.value("taps", c.taps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mask") && !j.at("mask").is_null()) c.mask = LayerMask::from_json(j.at("mask"));
  if (j.contains("blend") && !j.at("blend").is_null()) c.blend = BlendSpec::from_json(j.at("blend"));
  return c;
}

// ---------------------------------------------------------------- checkpoint

Archive MapperCheckpoint::to_archive() const {
  Archive a;
  store_generator(a, params);
  a.meta["kind"] = "mapper";
  a.meta["mapper"] = {{"base_hash", base_hash},
                      {"config", config.to_json()},
                      {"reference_hashes", reference_hashes},
                      {"loss_trace", loss_trace}};
  return a;
}

MapperCheckpoint MapperCheckpoint::from_archive(const Archive& archive) {
  if (!archive.meta.contains("mapper")) throw InvalidInput("checkpoint is not a style mapper");
  const auto& m = archive.meta.at("mapper");
  MapperCheckpoint c;
  c.params = load_generator(archive);
  c.base_hash = m.at("base_hash").get<std::string>();
  c.config = TrainConfig::from_json(m.at("config"));
  c.reference_hashes = m.at("reference_hashes").get<std::vector<std::string>>();
  c.loss_trace = m.at("loss_trace").get<std::vector<double>>();
  return c;
}

void MapperCheckpoint::save(const std::filesystem::path& path) const { to_archive().save(path); }

MapperCheckpoint MapperCheckpoint::load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

std::string hash_image(const torch::Tensor& image) { return hash_tensors({{"image", image.to(torch::kFloat32)}}); }

// ---------------------------------------------------------------- finetune

StyleCode reference_code(const torch::Tensor& reference, const GeneratorParams& base, const EncoderParams& enc,
                         const TrainConfig& config, const StyleCode* mean) {
  torch::NoGradGuard no_grad;
  if (config.ood_mean_code) return mean ? *mean : mean_style(base, kMeanStyleSamples, config.seed);
  if (config.blend) return virtual_invert(reference, enc, base, *config.blend, mean);
  return style_from_w(invert(reference, enc).w, base);
}

MapperCheckpoint finetune(const GeneratorParams& base, const DiscriminatorParams& critic, const EncoderParams& enc,
                          const std::vector<torch::Tensor>& references, const TrainConfig& config,
                          const EmbeddingParams* embedding, const FinetuneHooks& hooks) {
  const auto& gcfg = base.config;
  config.validate(gcfg, critic.config);
  require(!references.empty(), "finetune: need at least one reference image");
  require(critic.config.resolution == gcfg.resolution, "finetune: critic resolution does not match generator");
  require(enc.config.resolution == gcfg.resolution && enc.config.w_dim == gcfg.w_dim,
          "finetune: encoder does not match generator");
  require(critic.dtype() == base.dtype() && enc.dtype() == base.dtype(), "finetune: mixed precision inputs");
  const bool use_identity = config.id_weight > 0;
  if (use_identity) require(embedding != nullptr, "finetune: identity loss needs an embedding network");

  const auto mask = config.resolved_mask(gcfg.num_layers());
  const auto taps = config.taps.empty() ? critic.config.default_taps() : config.taps;
  const auto base_hash = base.hash();
  auto rng = make_rng(config.seed);

  MapperCheckpoint out;
  out.base_hash = base_hash;
  out.config = config;

  // Reference codes and target activations.
  std::optional<StyleCode> mean;
  if (config.ood_mean_code || config.blend) mean = mean_style(base, kMeanStyleSamples, config.seed);
  std::vector<StyleCode> ref_codes;
  std::vector<torch::Tensor> ref_images;
  for (const auto& r : references) {
    auto y = as_batch(r);
    require(y.size(0) == 1, "finetune: each reference must be a single image");
    if (y.size(2) != gcfg.resolution || y.size(3) != gcfg.resolution) {
      auto prepared = prepare_image(y[0], gcfg.resolution);
      log_warn("finetune: reference ", prepared.transform);
      y = prepared.pixels.unsqueeze(0);
    }
    y = y.to(base.dtype());
    out.reference_hashes.push_back(hash_image(y[0]));
    ref_codes.push_back(reference_code(y, base, enc, config, mean ? &*mean : nullptr));
    ref_images.push_back(y);
  }
  const auto K = static_cast<std::int64_t>(references.size());
  const std::int64_t B = config.batch;
  FeatureStack target;
  {
    torch::NoGradGuard no_grad;
    auto ys = torch::cat(ref_images, 0);
    if (config.grayscale) ys = grayscale(ys);
    const auto f = critic_features(ys, critic, taps);
    for (const auto& t : f.layers) target.layers.push_back(t.repeat_interleave(B, 0));
  }

  auto theta = base.clone(false);
  std::vector<torch::Tensor> params;
  for (auto& [name, t] : theta.tensors)
    if (name.starts_with("synthesis.") && !name.ends_with(".noise") && !name.ends_with(".noise_strength"))
      params.push_back(t.set_requires_grad(true));
    else if (name.starts_with("torgb.")) params.push_back(t.set_requires_grad(true));
  torch::optim::Adam opt(params, torch::optim::AdamOptions(config.learning_rate).betas({0.0, 0.99}).eps(1e-8));

  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < config.iterations; ++it) {
    StyleCode codes;
    {
      torch::NoGradGuard no_grad;
      const auto z = sample_z(K * B, gcfg, rng, base.dtype());
      std::vector<StyleCode> parts;
      for (std::int64_t k = 0; k < K; ++k)
        parts.push_back(mix_styles_with(ref_codes[static_cast<std::size_t>(k)], mask, config.mix_space, base,
                                        z.slice(0, k * B, (k + 1) * B)));
      codes = StyleCode::cat(parts);
    }
    const auto images = synthesize(codes, theta).image;
    const auto perceptual =
        perceptual_loss_to(critic_features(config.grayscale ? grayscale(images) : images, critic, taps), target);
    auto loss = perceptual;
    torch::Tensor identity;
    if (use_identity) {
      torch::Tensor base_images;
      {
        torch::NoGradGuard no_grad;
        base_images = synthesize(codes, base).image;
      }
      identity = identity_loss(base_images, images, *embedding);
      loss = loss + config.id_weight * identity;
    }
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      out.params = theta.clone(false);
      throw FinetuneDiverged("finetune: loss became non-finite at iteration " + std::to_string(it), out);
    }
    if (hooks.on_step) {
      FinetuneStep step{it, &codes, &theta, value, perceptual.item<double>(),
                        identity.defined() ? identity.item<double>() : 0.0};
      hooks.on_step(step);
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    out.loss_trace.push_back(value);
    if ((it + 1) % 50 == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log_debug("finetune ", it + 1, "/", config.iterations, " loss ", value, " (", secs / (it + 1), " s/it)");
    }
  }
  out.params = theta.clone(false);
  return out;
}

}  // namespace jojo
