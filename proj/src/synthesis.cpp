#include "jojo/synthesis.hpp"

#include <bit>
#include <cmath>

#include "jojo/archive.hpp"

namespace jojo {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------- config

int GeneratorConfig::default_width(int resolution) { return std::min(64, 1024 / resolution); }

int GeneratorConfig::blocks() const { return std::countr_zero(static_cast<unsigned>(resolution)) - 1; }

int GeneratorConfig::block_channels(int block) const {
  return channels.empty() ? default_width(4 << block) : channels.at(static_cast<std::size_t>(block));
}

int GeneratorConfig::style_dim(int layer) const {
  const int block = layer / 2;
  if (layer % 2 == 1 || block == 0) return block_channels(block);
  return block_channels(block - 1);
}

std::vector<int> GeneratorConfig::style_dims() const {
  std::vector<int> dims;
  for (int l = 0; l < num_layers(); ++l) dims.push_back(style_dim(l));
  return dims;
}

int GeneratorConfig::layer_resolution(int layer) const { return 4 << (layer / 2); }

void GeneratorConfig::validate() const {
  require(resolution >= 8 && std::has_single_bit(static_cast<unsigned>(resolution)),
          "generator: resolution must be a power of two >= 8");
  require(z_dim > 0 && w_dim > 0, "generator: latent sizes must be positive");
  require(mapping_layers >= 1, "generator: mapping net needs at least one layer");
  require(mapping_lr_mul > 0, "generator: mapping_lr_mul must be positive");
  require(channels.empty() || static_cast<int>(channels.size()) == blocks(),
          "generator: channels must list one width per block");
  for (int b = 0; b < blocks(); ++b) require(block_channels(b) > 0, "generator: widths must be positive");
}

nlohmann::json GeneratorConfig::to_json() const {
  std::vector<int> widths;
  for (int b = 0; b < blocks(); ++b) widths.push_back(block_channels(b));
  return {{"resolution", resolution},         {"z_dim", z_dim},
          {"w_dim", w_dim},                   {"mapping_layers", mapping_layers},
          {"mapping_lr_mul", mapping_lr_mul}, {"mapping_linear", mapping_linear},
          {"channels", widths},               {"style_layers", num_layers()}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.z_dim = j.at("z_dim").get<int>();
  c.w_dim = j.at("w_dim").get<int>();
  c.mapping_layers = j.at("mapping_layers").get<int>();
  c.mapping_lr_mul = j.at("mapping_lr_mul").get<double>();
  c.mapping_linear = j.value("mapping_linear", false);
  c.channels = j.at("channels").get<std::vector<int>>();
  c.validate();
  return c;
}

GeneratorConfig GeneratorConfig::desk() {
  GeneratorConfig c;
  for (int b = 0; b < c.blocks(); ++b) c.channels.push_back(default_width(4 << b));
  return c;
}

GeneratorConfig GeneratorConfig::tiny() {
  GeneratorConfig c;
  c.resolution = 8;
  c.z_dim = c.w_dim = 8;
  c.mapping_layers = 2;
  c.channels = {8, 8};
  return c;
}

// ---------------------------------------------------------------- params

const torch::Tensor& GeneratorParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidInput("generator: missing tensor '" + name + "'");
  return it->second;
}

torch::Dtype GeneratorParams::dtype() const { return at("synthesis.const").scalar_type(); }

GeneratorParams GeneratorParams::to(torch::Dtype dtype) const {
  return {config, cast_tensors(tensors, dtype), trained_steps};
}

GeneratorParams GeneratorParams::clone(bool requires_grad) const {
  GeneratorParams p{config, clone_tensors(tensors, false), trained_steps};
  if (requires_grad)
    for (const auto& name : p.trainable_names()) p.tensors[name].set_requires_grad(true);
  return p;
}

std::vector<std::string> GeneratorParams::trainable_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : tensors)
    if (!name.ends_with(".noise")) names.push_back(name);
  return names;
}

bool GeneratorParams::same_architecture(const GeneratorParams& other) const {
  if (!(config == other.config) || tensors.size() != other.tensors.size()) return false;
  for (auto a = tensors.begin(), b = other.tensors.begin(); a != tensors.end(); ++a, ++b)
    if (a->first != b->first || a->second.sizes() != b->second.sizes()) return false;
  return true;
}

GeneratorParams init_generator(const GeneratorConfig& config, std::uint64_t seed, torch::Dtype dtype) {
  config.validate();
  auto rng = make_rng(seed);
  const auto opt = options_for(torch::kFloat64);
  auto randn = [&](std::vector<std::int64_t> shape) { return torch::randn(shape, rng, opt); };
  TensorMap t;

  for (int i = 0; i < config.mapping_layers; ++i) {
    const int in = i == 0 ? config.z_dim : config.w_dim;
    const auto p = "mapping." + std::to_string(i);
    t[p + ".weight"] = randn({config.w_dim, in}) / config.mapping_lr_mul;
    t[p + ".bias"] = torch::zeros({config.w_dim}, opt);
  }
  for (int l = 0; l < config.num_layers(); ++l) {
    const auto p = "style." + std::to_string(l);
    t[p + ".weight"] = randn({config.style_dim(l), config.w_dim});
    t[p + ".bias"] = torch::ones({config.style_dim(l)}, opt);
  }
  t["synthesis.const"] = randn({1, config.block_channels(0), 4, 4});
  for (int l = 0; l < config.num_layers(); ++l) {
    const auto p = "synthesis." + std::to_string(l);
    const int out = config.block_channels(l / 2);
    const int res = config.layer_resolution(l);
    t[p + ".weight"] = randn({out, config.style_dim(l), 3, 3});
    t[p + ".bias"] = torch::zeros({out}, opt);
    t[p + ".noise"] = randn({1, 1, res, res});
    t[p + ".noise_strength"] = torch::zeros({1}, opt);
  }
  for (int b = 0; b < config.blocks(); ++b) {
    const auto p = "torgb." + std::to_string(b);
    t[p + ".weight"] = randn({3, config.block_channels(b), 1, 1});
    t[p + ".bias"] = torch::zeros({3}, opt);
  }
  return GeneratorParams{config, t, 0}.to(dtype);
}

// ---------------------------------------------------------------- StyleCode

StyleCode StyleCode::select(std::int64_t index) const {
  StyleCode out;
  for (const auto& s : layers) out.layers.push_back(s.slice(0, index, index + 1));
  for (const auto& w : w_plus) out.w_plus.push_back(w.slice(0, index, index + 1));
  return out;
}

StyleCode StyleCode::repeat(std::int64_t n) const {
  StyleCode out;
  for (const auto& s : layers) out.layers.push_back(s.repeat({n, 1}));
  for (const auto& w : w_plus) out.w_plus.push_back(w.repeat({n, 1}));
  return out;
}

StyleCode StyleCode::detach() const {
  StyleCode out;
  for (const auto& s : layers) out.layers.push_back(s.detach());
  for (const auto& w : w_plus) out.w_plus.push_back(w.detach());
  return out;
}

StyleCode StyleCode::cat(const std::vector<StyleCode>& codes) {
  require(!codes.empty(), "StyleCode::cat: empty input");
  StyleCode out;
  const auto layers = codes.front().layers.size();
  const bool with_w = !codes.front().w_plus.empty();
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<torch::Tensor> parts, wparts;
    for (const auto& c : codes) {
      require(c.layers.size() == layers, "StyleCode::cat: layer count mismatch");
      parts.push_back(c.layers[l]);
      if (with_w && c.w_plus.size() == layers) wparts.push_back(c.w_plus[l]);
    }
    out.layers.push_back(torch::cat(parts, 0));
    if (with_w && wparts.size() == codes.size()) out.w_plus.push_back(torch::cat(wparts, 0));
  }
  if (out.w_plus.size() != out.layers.size()) out.w_plus.clear();
  return out;
}

// ---------------------------------------------------------------- forward

namespace {

void check_styles(const StyleCode& s, const GeneratorParams& params) {
  const auto& cfg = params.config;
  require(static_cast<int>(s.layers.size()) == cfg.num_layers(),
          "synthesize: style code has " + std::to_string(s.layers.size()) + " layers, generator expects " +
              std::to_string(cfg.num_layers()));
  const auto batch = s.batch();
  require(batch >= 1, "synthesize: empty style batch");
  for (int l = 0; l < cfg.num_layers(); ++l) {
    const auto& t = s.layers[static_cast<std::size_t>(l)];
    require(t.dim() == 2 && t.size(0) == batch && t.size(1) == cfg.style_dim(l),
            "synthesize: style layer " + std::to_string(l) + " has wrong shape");
    require(t.scalar_type() == params.dtype(), "synthesize: style dtype does not match generator");
  }
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  return F::interpolate(
      x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kBilinear).align_corners(false));
}

// Weight-demodulated convolution with the modulation applied to activations.
torch::Tensor modulated_conv(torch::Tensor x, const torch::Tensor& style, const torch::Tensor& weight, bool demodulate,
                             bool upsample) {
  const auto batch = x.size(0);
  const auto in = weight.size(1);
  const auto k = weight.size(2);
  const auto w = weight * (1.0 / std::sqrt(static_cast<double>(in * k * k)));
  x = x * style.view({batch, in, 1, 1});
  if (upsample) x = upsample2x(x);
  auto y = F::conv2d(x, w, F::Conv2dFuncOptions().padding(k / 2));
  if (demodulate) {
    const auto energy = torch::mm(style.square(), w.square().sum({2, 3}).t());  // [B, out]
    y = y * torch::rsqrt(energy + 1e-8).view({batch, -1, 1, 1});
  }
  return y;
}

torch::Tensor conv_layer(const GeneratorParams& p, int layer, const torch::Tensor& x, const torch::Tensor& style) {
  const auto name = "synthesis." + std::to_string(layer);
  const bool up = layer % 2 == 0 && layer > 0;
  auto y = modulated_conv(x, style, p.at(name + ".weight"), true, up);
  y = y + p.at(name + ".noise_strength") * p.at(name + ".noise");
  y = y + p.at(name + ".bias").view({1, -1, 1, 1});
  return lrelu(y);
}

torch::Tensor to_rgb(const GeneratorParams& p, int block, const torch::Tensor& x, const torch::Tensor& style) {
  const auto name = "torgb." + std::to_string(block);
  return modulated_conv(x, style, p.at(name + ".weight"), false, false) + p.at(name + ".bias").view({1, 3, 1, 1});
}

torch::Tensor const_input(const GeneratorParams& p, std::int64_t batch) {
  return p.at("synthesis.const").expand({batch, -1, -1, -1});
}

}  // namespace

torch::Tensor map_latent(const torch::Tensor& z, const GeneratorParams& params) {
  const auto& cfg = params.config;
  require(z.dim() == 2 && z.size(1) == cfg.z_dim,
          "map_latent: expected [B," + std::to_string(cfg.z_dim) + "] latent");
  require(z.scalar_type() == params.dtype(), "map_latent: latent dtype does not match generator");
  auto x = z * torch::rsqrt(z.square().mean(1, true) + 1e-8);
  for (int i = 0; i < cfg.mapping_layers; ++i) {
    const auto name = "mapping." + std::to_string(i);
    const auto& weight = params.at(name + ".weight");
    const double scale = cfg.mapping_lr_mul / std::sqrt(static_cast<double>(weight.size(1)));
    x = torch::addmm(params.at(name + ".bias") * cfg.mapping_lr_mul, x, (weight * scale).t());
    if (!cfg.mapping_linear) x = lrelu(x);
  }
  return x;
}

StyleCode style_from_w_plus(const std::vector<torch::Tensor>& w_plus, const GeneratorParams& params) {
  const auto& cfg = params.config;
  require(static_cast<int>(w_plus.size()) == cfg.num_layers(), "style_from_w: need one W vector per layer");
  StyleCode s;
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.w_dim));
  for (int l = 0; l < cfg.num_layers(); ++l) {
    const auto& w = w_plus[static_cast<std::size_t>(l)];
    require(w.dim() == 2 && w.size(1) == cfg.w_dim, "style_from_w: expected [B," + std::to_string(cfg.w_dim) + "]");
    require(w.scalar_type() == params.dtype(), "style_from_w: W dtype does not match generator");
    const auto name = "style." + std::to_string(l);
    s.layers.push_back(torch::addmm(params.at(name + ".bias"), w, (params.at(name + ".weight") * scale).t()));
  }
  s.w_plus = w_plus;
  return s;
}

StyleCode style_from_w(const torch::Tensor& w, const GeneratorParams& params) {
  return style_from_w_plus(std::vector<torch::Tensor>(static_cast<std::size_t>(params.config.num_layers()), w),
                           params);
}

SynthesisResult synthesize(const StyleCode& s, const GeneratorParams& params) {
  check_styles(s, params);
  const auto& cfg = params.config;
  SynthesisResult out;
  auto x = const_input(params, s.batch());
  torch::Tensor rgb;
  for (int b = 0; b < cfg.blocks(); ++b) {
    for (int c = 0; c < 2; ++c) {
      const int l = 2 * b + c;
      x = conv_layer(params, l, x, s.layers[static_cast<std::size_t>(l)]);
      out.features.layers.push_back(x);
    }
    const auto t = to_rgb(params, b, x, s.layers[static_cast<std::size_t>(2 * b + 1)]);
    rgb = rgb.defined() ? upsample2x(rgb) + t : t;
  }
  out.image = torch::tanh(rgb);
  return out;
}

torch::Tensor synthesize_interpolated(const StyleCode& s, const GeneratorParams& params_a,
                                      const GeneratorParams& params_b, double alpha,
                                      const std::vector<bool>& layers) {
  require(params_a.same_architecture(params_b), "synthesize_interpolated: generators differ in architecture");
  require(alpha >= 0.0 && alpha <= 1.0 && std::isfinite(alpha), "synthesize_interpolated: alpha must lie in [0,1]");
  check_styles(s, params_a);
  const auto& cfg = params_a.config;
  require(layers.empty() || static_cast<int>(layers.size()) == cfg.num_layers(),
          "synthesize_interpolated: layer selection must have one entry per style layer");

  auto xa = const_input(params_a, s.batch());
  auto xb = const_input(params_b, s.batch());
  torch::Tensor rgb;
  for (int b = 0; b < cfg.blocks(); ++b) {
    for (int c = 0; c < 2; ++c) {
      const int l = 2 * b + c;
      const auto& style = s.layers[static_cast<std::size_t>(l)];
      xa = conv_layer(params_a, l, xa, style);
      xb = conv_layer(params_b, l, xb, style);
      if (layers.empty() || layers[static_cast<std::size_t>(l)]) xa = xb = torch::lerp(xa, xb, alpha);
    }
    const auto& style = s.layers[static_cast<std::size_t>(2 * b + 1)];
    const auto ta = to_rgb(params_a, b, xa, style);
    const auto tb = to_rgb(params_b, b, xb, style);
    const auto up = rgb.defined() ? upsample2x(rgb) : torch::Tensor();
    rgb = torch::lerp(up.defined() ? up + ta : ta, up.defined() ? up + tb : tb, alpha);
  }
  return torch::tanh(rgb);
}

// ---------------------------------------------------------------- mean code

torch::Tensor sample_z(std::int64_t n, const GeneratorConfig& config, torch::Generator& rng, torch::Dtype dtype) {
  return torch::randn({n, config.z_dim}, rng, options_for(dtype));
}

StyleMoments style_moments(const GeneratorParams& params, std::int64_t n, std::uint64_t seed) {
  require(n >= 1, "mean_style: need at least one sample");
  torch::NoGradGuard no_grad;
  const auto& cfg = params.config;
  auto rng = make_rng(seed);
  const auto L = static_cast<std::size_t>(cfg.num_layers());
  std::vector<torch::Tensor> sum(L), sumsq(L);
  torch::Tensor wsum;
  constexpr std::int64_t kChunk = 1000;
  for (std::int64_t done = 0; done < n; done += kChunk) {
    const auto m = std::min(kChunk, n - done);
    const auto w = map_latent(sample_z(m, cfg, rng, params.dtype()), params);
    const auto s = style_from_w(w, params);
    const auto w64 = w.to(torch::kFloat64).sum(0, true);
    wsum = wsum.defined() ? wsum + w64 : w64;
    for (std::size_t l = 0; l < L; ++l) {
      const auto x = s.layers[l].to(torch::kFloat64);
      sum[l] = sum[l].defined() ? sum[l] + x.sum(0, true) : x.sum(0, true);
      sumsq[l] = sumsq[l].defined() ? sumsq[l] + x.square().sum(0, true) : x.square().sum(0, true);
    }
  }
  StyleMoments out;
  out.samples = n;
  const auto dn = static_cast<double>(n);
  const auto wmean = (wsum / dn).to(params.dtype());
  for (std::size_t l = 0; l < L; ++l) {
    const auto mean = sum[l] / dn;
    const auto var = n > 1 ? (sumsq[l] - dn * mean.square()).clamp_min(0) / (dn - 1) : torch::zeros_like(mean);
    out.mean.layers.push_back(mean.to(params.dtype()));
    out.mean.w_plus.push_back(wmean);
    out.variance.layers.push_back(var.to(params.dtype()));
  }
  return out;
}

StyleCode mean_style(const GeneratorParams& params, std::int64_t n, std::uint64_t seed) {
  return style_moments(params, n, seed).mean;
}

// ---------------------------------------------------------------- storage

void store_generator(Archive& archive, const GeneratorParams& params, const std::string& prefix) {
  archive.put(prefix, params.tensors);
  archive.meta[prefix] = {{"config", params.config.to_json()}, {"trained_steps", params.trained_steps}};
}

GeneratorParams load_generator(const Archive& archive, const std::string& prefix) {
  if (!archive.meta.contains(prefix)) throw InvalidInput("checkpoint has no '" + prefix + "' section");
  const auto& m = archive.meta.at(prefix);
  GeneratorParams p{GeneratorConfig::from_json(m.at("config")), archive.get(prefix), m.value("trained_steps", 0L)};
  const auto reference = init_generator(p.config, 0, p.dtype());
  require(p.same_architecture(reference), "checkpoint '" + prefix + "' does not match its declared architecture");
  return p;
}

}  // namespace jojo
