#include "jojo/critic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "jojo/archive.hpp"
#include "jojo/image.hpp"

namespace jojo {

namespace F = torch::nn::functional;

int CriticConfig::resblocks() const {
  // Down to 2x2, or 1x1 for very small inputs.
  const int octaves = std::countr_zero(static_cast<unsigned>(resolution));
  return std::max(1, octaves - 1);
}

int CriticConfig::width(int index) const {
  if (!channels.empty()) return channels.at(static_cast<std::size_t>(index));
  return GeneratorConfig::default_width(std::max(1, resolution >> index) < 4 ? 4 : resolution >> index);
}

std::vector<int> CriticConfig::default_taps() const {
  std::vector<int> taps;
  for (int i = 1; i < resblocks(); ++i) taps.push_back(i);
  if (taps.empty()) taps.push_back(0);
  return taps;
}

void CriticConfig::validate() const {
  require(resolution >= 8 && std::has_single_bit(static_cast<unsigned>(resolution)),
          "critic: resolution must be a power of two >= 8");
  require(channels.empty() || static_cast<int>(channels.size()) == resblocks() + 1,
          "critic: channels must list the fromRGB width plus one width per resblock");
}

nlohmann::json CriticConfig::to_json() const {
  std::vector<int> widths;
  for (int i = 0; i <= resblocks(); ++i) widths.push_back(width(i));
  return {{"resolution", resolution}, {"channels", widths}, {"resblocks", resblocks()}};
}

CriticConfig CriticConfig::from_json(const nlohmann::json& j) {
  CriticConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.validate();
  return c;
}

CriticConfig CriticConfig::matching(const GeneratorConfig& gen) {
  CriticConfig c;
  c.resolution = gen.resolution;
  if (!gen.channels.empty()) {
    // Mirror: the critic sees resolution r with the generator's width at r.
    auto gen_width = [&](int res) {
      const int block = std::countr_zero(static_cast<unsigned>(std::max(res, 4))) - 2;
      return gen.block_channels(std::min(block, gen.blocks() - 1));
    };
    for (int i = 0; i <= c.resblocks(); ++i) c.channels.push_back(gen_width(c.resolution >> i));
  }
  return c;
}

const torch::Tensor& DiscriminatorParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidInput("critic: missing tensor '" + name + "'");
  return it->second;
}

torch::Dtype DiscriminatorParams::dtype() const { return at("from_rgb.weight").scalar_type(); }

DiscriminatorParams DiscriminatorParams::to(torch::Dtype dtype) const {
  return {config, cast_tensors(tensors, dtype), trained_steps};
}

DiscriminatorParams DiscriminatorParams::clone(bool requires_grad) const {
  return {config, clone_tensors(tensors, requires_grad), trained_steps};
}

DiscriminatorParams init_critic(const CriticConfig& config, std::uint64_t seed, torch::Dtype dtype) {
  config.validate();
  auto rng = make_rng(seed);
  const auto opt = options_for(torch::kFloat64);
  auto randn = [&](std::vector<std::int64_t> shape) { return torch::randn(shape, rng, opt); };
  TensorMap t;
  t["from_rgb.weight"] = randn({config.width(0), 3, 1, 1});
  t["from_rgb.bias"] = torch::zeros({config.width(0)}, opt);
  for (int i = 0; i < config.resblocks(); ++i) {
    const auto p = "block." + std::to_string(i);
    const int in = config.width(i), out = config.width(i + 1);
    t[p + ".conv0.weight"] = randn({in, in, 3, 3});
    t[p + ".conv0.bias"] = torch::zeros({in}, opt);
    t[p + ".conv1.weight"] = randn({out, in, 3, 3});
    t[p + ".conv1.bias"] = torch::zeros({out}, opt);
    t[p + ".skip.weight"] = randn({out, in, 1, 1});
  }
  const int c = config.width(config.resblocks());
  const int fr = config.final_resolution();
  t["head.fc0.weight"] = randn({c, c * fr * fr});
  t["head.fc0.bias"] = torch::zeros({c}, opt);
  t["head.fc1.weight"] = randn({1, c});
  t["head.fc1.bias"] = torch::zeros({1}, opt);
  return DiscriminatorParams{config, t, 0}.to(dtype);
}

namespace {

torch::Tensor conv(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& bias) {
  const auto fan_in = weight.size(1) * weight.size(2) * weight.size(3);
  auto y = F::conv2d(x, weight * (1.0 / std::sqrt(static_cast<double>(fan_in))),
                     F::Conv2dFuncOptions().padding(weight.size(2) / 2));
  return bias.defined() ? y + bias.view({1, -1, 1, 1}) : y;
}

torch::Tensor linear(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& bias) {
  return torch::addmm(bias, x, (weight * (1.0 / std::sqrt(static_cast<double>(weight.size(1))))).t());
}

torch::Tensor resblock(const DiscriminatorParams& p, int i, const torch::Tensor& x) {
  const auto name = "block." + std::to_string(i);
  auto y = lrelu(conv(x, p.at(name + ".conv0.weight"), p.at(name + ".conv0.bias")));
  y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2));
  y = lrelu(conv(y, p.at(name + ".conv1.weight"), p.at(name + ".conv1.bias")));
  const auto skip = conv(F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)), p.at(name + ".skip.weight"), {});
  return (y + skip) * (1.0 / std::sqrt(2.0));
}

torch::Tensor trunk_input(const torch::Tensor& images, const DiscriminatorParams& params) {
  const auto x = as_batch(images);
  check_image(x, params.config.resolution, "critic");
  require(x.scalar_type() == params.dtype(), "critic: image dtype does not match critic");
  return lrelu(conv(x, params.at("from_rgb.weight"), params.at("from_rgb.bias")));
}

}  // namespace

torch::Tensor critic_score(const torch::Tensor& images, const DiscriminatorParams& params) {
  auto x = trunk_input(images, params);
  for (int i = 0; i < params.config.resblocks(); ++i) x = resblock(params, i, x);
  x = lrelu(linear(x.flatten(1), params.at("head.fc0.weight"), params.at("head.fc0.bias")));
  return linear(x, params.at("head.fc1.weight"), params.at("head.fc1.bias")).squeeze(1);
}

FeatureStack critic_features(const torch::Tensor& images, const DiscriminatorParams& params,
                             const std::vector<int>& taps) {
  require(!taps.empty(), "critic_features: no taps requested");
  int deepest = 0;
  for (int t : taps) {
    require(t >= 0 && t < params.config.resblocks(),
            "critic_features: tap " + std::to_string(t) + " out of range (critic has " +
                std::to_string(params.config.resblocks()) + " resblocks)");
    deepest = std::max(deepest, t);
  }
  std::vector<torch::Tensor> after(static_cast<std::size_t>(deepest + 1));
  auto x = trunk_input(images, params);
  for (int i = 0; i <= deepest; ++i) after[static_cast<std::size_t>(i)] = x = resblock(params, i, x);
  FeatureStack out;
  for (int t : taps) out.layers.push_back(after[static_cast<std::size_t>(t)]);
  return out;
}

void store_critic(Archive& archive, const DiscriminatorParams& params, const std::string& prefix) {
  archive.put(prefix, params.tensors);
  archive.meta[prefix] = {{"config", params.config.to_json()}, {"trained_steps", params.trained_steps}};
}

DiscriminatorParams load_critic(const Archive& archive, const std::string& prefix) {
  if (!archive.meta.contains(prefix)) throw InvalidInput("checkpoint has no '" + prefix + "' section");
  const auto& m = archive.meta.at(prefix);
  return {CriticConfig::from_json(m.at("config")), archive.get(prefix), m.value("trained_steps", 0L)};
}

}  // namespace jojo
