#include "jojo/inversion.hpp"

#include "jojo/log.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "jojo/archive.hpp"
#include "jojo/image.hpp"
#include "jojo/losses.hpp"

namespace jojo {

namespace F = torch::nn::functional;

int EncoderConfig::stages() const { return std::countr_zero(static_cast<unsigned>(resolution)) - 2; }

int EncoderConfig::width(int index) const {
  if (!channels.empty()) return channels.at(static_cast<std::size_t>(index));
  static constexpr int kDefault[] = {16, 32, 64, 96, 128, 128, 128, 128};
  return kDefault[std::min(index, 7)];
}

void EncoderConfig::validate() const {
  require(resolution >= 8 && std::has_single_bit(static_cast<unsigned>(resolution)),
          "encoder: resolution must be a power of two >= 8");
  require(channels.empty() || static_cast<int>(channels.size()) == stages() + 1,
          "encoder: channels must list the fromRGB width plus one per stage");
}

nlohmann::json EncoderConfig::to_json() const {
  std::vector<int> widths;
  for (int i = 0; i <= stages(); ++i) widths.push_back(width(i));
  return {{"resolution", resolution}, {"w_dim", w_dim}, {"channels", widths}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.w_dim = j.at("w_dim").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.validate();
  return c;
}

EncoderConfig EncoderConfig::matching(const GeneratorConfig& gen) {
  EncoderConfig c;
  c.resolution = gen.resolution;
  c.w_dim = gen.w_dim;
  return c;
}

const torch::Tensor& EncoderParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidInput("encoder: missing tensor '" + name + "'");
  return it->second;
}

torch::Dtype EncoderParams::dtype() const { return at("from_rgb.weight").scalar_type(); }

EncoderParams EncoderParams::to(torch::Dtype dtype) const { return {config, cast_tensors(tensors, dtype)}; }

EncoderParams init_encoder(const EncoderConfig& config, const torch::Tensor& w_mean, std::uint64_t seed,
                           torch::Dtype dtype) {
  config.validate();
  require(w_mean.numel() == config.w_dim, "encoder: mean W has wrong size");
  auto rng = make_rng(seed);
  const auto opt = options_for(torch::kFloat64);
  auto randn = [&](std::vector<std::int64_t> shape) { return torch::randn(shape, rng, opt); };
  TensorMap t;
  t["from_rgb.weight"] = randn({config.width(0), 3, 1, 1});
  t["from_rgb.bias"] = torch::zeros({config.width(0)}, opt);
  for (int i = 0; i < config.stages(); ++i) {
    const auto p = "stage." + std::to_string(i);
    const int in = config.width(i), out = config.width(i + 1);
    t[p + ".conv0.weight"] = randn({in, in, 3, 3});
    t[p + ".conv0.bias"] = torch::zeros({in}, opt);
    t[p + ".conv1.weight"] = randn({out, in, 3, 3});
    t[p + ".conv1.bias"] = torch::zeros({out}, opt);
  }
  const int features = config.width(config.stages()) * 16;
  t["head.weight"] = torch::zeros({config.w_dim, features}, opt);
  t["head.bias"] = torch::zeros({config.w_dim}, opt);
  t["w_mean"] = w_mean.detach().reshape({config.w_dim}).to(torch::kFloat64);
  return EncoderParams{config, cast_tensors(t, dtype)};
}

namespace {

torch::Tensor conv(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& bias, int stride) {
  const auto fan_in = weight.size(1) * weight.size(2) * weight.size(3);
  return F::conv2d(x, weight * (1.0 / std::sqrt(static_cast<double>(fan_in))),
                   F::Conv2dFuncOptions().padding(weight.size(2) / 2).stride(stride).bias(bias));
}

torch::Tensor encode(const torch::Tensor& images, const EncoderParams& p) {
  auto x = lrelu(conv(images, p.at("from_rgb.weight"), p.at("from_rgb.bias"), 1));
  for (int i = 0; i < p.config.stages(); ++i) {
    const auto name = "stage." + std::to_string(i);
    x = lrelu(conv(x, p.at(name + ".conv0.weight"), p.at(name + ".conv0.bias"), 1));
    x = lrelu(conv(x, p.at(name + ".conv1.weight"), p.at(name + ".conv1.bias"), 2));
  }
  const auto& head = p.at("head.weight");
  const auto v = x.flatten(1);
  return p.at("w_mean").view({1, -1}) +
         torch::addmm(p.at("head.bias"), v, (head * (1.0 / std::sqrt(static_cast<double>(head.size(1))))).t());
}

torch::Tensor generate(const torch::Tensor& w, const GeneratorParams& gen) {
  return synthesize(style_from_w(w, gen), gen).image;
}

}  // namespace

EncoderTrainResult train_encoder(const GeneratorParams& gen, const DiscriminatorParams* critic,
                                 const TrainEncoderConfig& config) {
  if (gen.trained_steps <= 0)
    throw TrainingError("train_encoder: generator has no training steps recorded; pretrain it first");
  require(config.iterations >= 1 && config.batch >= 1, "train_encoder: iterations and batch must be >= 1");
  const bool image_term = critic != nullptr && config.image_weight > 0;
  if (image_term) require(critic->config.resolution == gen.config.resolution, "train_encoder: critic resolution mismatch");

  torch::manual_seed(config.seed);
  auto rng = make_rng(config.seed);
  const auto frozen = gen.clone(false);
  const auto w_mean = mean_style(frozen, kMeanStyleSamples, config.seed).w_plus.front();
  auto enc = init_encoder(EncoderConfig::matching(gen.config), w_mean, config.seed + 1, gen.dtype());
  std::vector<torch::Tensor> trainable;
  for (auto& [name, t] : enc.tensors)
    if (name != "w_mean") trainable.push_back(t.set_requires_grad(true));
  torch::optim::Adam opt(trainable, torch::optim::AdamOptions(config.learning_rate).betas({0.9, 0.99}));
  const auto taps = image_term ? critic->config.default_taps() : std::vector<int>{};

  EncoderTrainResult result{enc, {}};
  for (int it = 0; it < config.iterations; ++it) {
    torch::Tensor w, images;
    {
      torch::NoGradGuard no_grad;
      w = map_latent(sample_z(config.batch, gen.config, rng, gen.dtype()), frozen);
      images = generate(w, frozen);
    }
    const auto pred = encode(images, enc);
    auto loss = (pred - w).square().mean();
    if (image_term && it % config.image_every == 0)
      loss = loss + config.image_weight * perceptual_loss(generate(pred, frozen), images, *critic, taps);
    opt.zero_grad();
    loss.backward();
    opt.step();
    result.loss_trace.push_back(loss.item<double>());
    if (config.log_every > 0 && (it + 1) % config.log_every == 0)
      log_info("encoder ", it + 1, "/", config.iterations, " loss ", result.loss_trace.back());
  }
  for (auto& [_, t] : enc.tensors) t = t.detach();
  result.encoder = enc;
  return result;
}

Inversion invert(const torch::Tensor& images, const EncoderParams& enc) {
  auto x = as_batch(images);
  Inversion out;
  const int res = enc.config.resolution;
  if (x.size(2) != res || x.size(3) != res) {
    std::vector<torch::Tensor> resized;
    for (std::int64_t i = 0; i < x.size(0); ++i) {
      auto prepared = prepare_image(x[i], res);
      resized.push_back(prepared.pixels);
      if (i == 0) {
        out.notes.push_back("input resized: " + prepared.transform);
        log_warn("invert: ", out.notes.back());
      }
    }
    x = torch::stack(resized);
  }
  require(x.scalar_type() == enc.dtype(), "invert: image dtype does not match encoder");
  out.w = encode(x, enc);
  return out;
}

nlohmann::json BlendSpec::to_json() const {
  return {{"mask", mask.to_json()}, {"source", source == BlendSource::Mean ? "mean" : "encoder"}};
}

BlendSpec BlendSpec::from_json(const nlohmann::json& j) {
  BlendSpec b;
  b.mask = LayerMask::from_json(j.at("mask"));
  const auto src = j.value("source", std::string("mean"));
  require(src == "mean" || src == "encoder", "blend source must be 'mean' or 'encoder'");
  b.source = src == "mean" ? BlendSource::Mean : BlendSource::Encoder;
  return b;
}

LayerMask full_scale_blend_mask() { return mask_preset("ood_blend", 26); }

StyleCode virtual_invert(const torch::Tensor& images, const EncoderParams& enc, const GeneratorParams& gen,
                         const BlendSpec& blend, const StyleCode* mean) {
  blend.mask.validate(gen.config);
  const auto code = style_from_w(invert(images, enc).w, gen);
  if (blend.source == BlendSource::Encoder) return code;
  StyleCode fallback = mean ? *mean : mean_style(gen);
  if (fallback.batch() != code.batch()) fallback = fallback.repeat(code.batch());
  return blend_codes(code, fallback, blend.mask);
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  // Images live in [-1, 1], so the peak-to-peak range is 2.
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  return 10.0 * std::log10(4.0 / std::max(mse, 1e-12));
}

EncoderQuality evaluate_encoder(const EncoderParams& enc, const GeneratorParams& gen, int samples,
                                std::uint64_t seed) {
  require(samples >= 1, "evaluate_encoder: need at least one sample");
  torch::NoGradGuard no_grad;
  auto rng = make_rng(seed);
  const auto mean = mean_style(gen, kMeanStyleSamples, seed + 7);
  std::vector<double> rel, rel_mean;
  double mse_enc = 0, mse_mean = 0;
  constexpr int kChunk = 100;
  for (int done = 0; done < samples; done += kChunk) {
    const int m = std::min(kChunk, samples - done);
    const auto w = map_latent(sample_z(m, gen.config, rng, gen.dtype()), gen);
    const auto images = generate(w, gen);
    const auto pred = invert(images, enc).w;
    const auto err = ((pred - w).norm(2, 1) / w.norm(2, 1)).to(torch::kFloat64);
    const auto err_mean = ((mean.w_plus.front() - w).norm(2, 1) / w.norm(2, 1)).to(torch::kFloat64);
    for (std::int64_t i = 0; i < m; ++i) {
      rel.push_back(err[i].item<double>());
      rel_mean.push_back(err_mean[i].item<double>());
    }
    const auto recon = synthesize(style_from_w(pred, gen), gen).image;
    const auto mean_img = synthesize(mean, gen).image;
    mse_enc += (recon - images).to(torch::kFloat64).square().mean().item<double>() * m;
    mse_mean += (mean_img - images).to(torch::kFloat64).square().mean().item<double>() * m;
  }
  auto median = [](std::vector<double>& v) {
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  EncoderQuality q;
  q.median_w_relative_error = median(rel);
  q.median_w_relative_error_mean_code = median(rel_mean);
  q.psnr_encoder = 10.0 * std::log10(4.0 / std::max(mse_enc / samples, 1e-12));
  q.psnr_mean_code = 10.0 * std::log10(4.0 / std::max(mse_mean / samples, 1e-12));
  return q;
}

void store_encoder(Archive& archive, const EncoderParams& params, const std::string& prefix) {
  archive.put(prefix, params.tensors);
  archive.meta[prefix] = {{"config", params.config.to_json()}};
}

EncoderParams load_encoder(const Archive& archive, const std::string& prefix) {
  if (!archive.meta.contains(prefix)) throw InvalidInput("checkpoint has no '" + prefix + "' section");
  return {EncoderConfig::from_json(archive.meta.at(prefix).at("config")), archive.get(prefix)};
}

}  // namespace jojo
