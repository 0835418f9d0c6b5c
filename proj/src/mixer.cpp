#include "jojo/mixer.hpp"

#include <algorithm>
#include <cmath>

namespace jojo {

bool LayerMask::is_binary() const {
  auto bin = [](double v) { return v == 0.0 || v == 1.0; };
  if (!std::all_of(layers.begin(), layers.end(), bin)) return false;
  for (const auto& [_, ch] : channels)
    if (!std::all_of(ch.begin(), ch.end(), bin)) return false;
  return true;
}

bool LayerMask::all(double value) const {
  if (!std::all_of(layers.begin(), layers.end(), [&](double v) { return v == value; })) return false;
  for (const auto& [_, ch] : channels)
    if (!std::all_of(ch.begin(), ch.end(), [&](double v) { return v == value; })) return false;
  return true;
}

void LayerMask::validate(const GeneratorConfig& config) const {
  require(static_cast<int>(layers.size()) == config.num_layers(),
          "mask has " + std::to_string(layers.size()) + " entries, generator has " +
              std::to_string(config.num_layers()) + " style layers");
  for (double v : layers) require(v >= 0.0 && v <= 1.0, "mask entries must lie in [0,1]");
  for (const auto& [l, ch] : channels) {
    require(l >= 0 && l < config.num_layers(), "channel mask refers to layer " + std::to_string(l));
    require(static_cast<int>(ch.size()) == config.style_dim(l),
            "channel mask for layer " + std::to_string(l) + " must have " + std::to_string(config.style_dim(l)) +
                " entries");
    for (double v : ch) require(v >= 0.0 && v <= 1.0, "mask entries must lie in [0,1]");
  }
}

nlohmann::json LayerMask::to_json() const {
  nlohmann::json j = {{"layers", layers}};
  if (!channels.empty()) {
    auto& c = j["channels"] = nlohmann::json::object();
    for (const auto& [l, ch] : channels) c[std::to_string(l)] = ch;
  }
  return j;
}

LayerMask LayerMask::from_json(const nlohmann::json& j) {
  LayerMask m;
  if (j.is_array()) {
    m.layers = j.get<std::vector<double>>();
    return m;
  }
  if (j.is_string()) return from_bits(j.get<std::string>());
  m.layers = j.at("layers").get<std::vector<double>>();
  if (j.contains("channels"))
    for (const auto& [k, v] : j.at("channels").items()) m.channels[std::stoi(k)] = v.get<std::vector<double>>();
  return m;
}

LayerMask LayerMask::from_bits(const std::string& bits) {
  LayerMask m;
  for (char c : bits) {
    if (c == ',' || c == ' ') continue;
    require(c == '0' || c == '1', "mask bits must be 0 or 1");
    m.layers.push_back(c == '1' ? 1.0 : 0.0);
  }
  require(!m.layers.empty(), "empty mask");
  return m;
}

LayerMask LayerMask::constant(std::size_t layers, double value) { return LayerMask{std::vector<double>(layers, value), {}}; }

std::string to_string(MixSpace space) { return space == MixSpace::S ? "S" : "W"; }

MixSpace mix_space_from_string(const std::string& name) {
  if (name == "S" || name == "s") return MixSpace::S;
  if (name == "W" || name == "w") return MixSpace::W;
  throw InvalidInput("unknown mixing space '" + name + "' (expected S or W)");
}

LayerMask mask_preset(const std::string& name, int num_layers) {
  require(num_layers >= 1, "mask_preset: need at least one layer");
  const auto L = static_cast<std::size_t>(num_layers);
  const auto coarse_end = static_cast<std::size_t>(std::lround(0.4 * num_layers));
  const auto fine_begin = L - static_cast<std::size_t>(std::lround(0.2 * num_layers));
  if (name == "all_ones") return LayerMask::constant(L, 1.0);
  if (name == "preserve_color_C" || name == "transfer_color_X") {
    auto m = LayerMask::constant(L, 0.0);
    for (std::size_t l = 0; l < coarse_end; ++l) m.layers[l] = 1.0;
    if (name == "preserve_color_C")
      for (std::size_t l = fine_begin; l < L; ++l) m.layers[l] = 1.0;
    return m;
  }
  if (name == "ood_blend") {
    auto m = LayerMask::constant(L, 1.0);
    constexpr int kFullScaleLayers = 26;
    for (int full : {7, 9, 11}) m.layers[static_cast<std::size_t>(full * num_layers / kFullScaleLayers)] = 0.0;
    return m;
  }
  throw InvalidInput("unknown mask preset '" + name + "'");
}

std::vector<std::string> mask_preset_names() { return {"all_ones", "preserve_color_C", "transfer_color_X", "ood_blend"}; }

LayerMask parse_mask(const std::string& spec, int num_layers) {
  const auto names = mask_preset_names();
  if (std::find(names.begin(), names.end(), spec) != names.end()) return mask_preset(spec, num_layers);
  auto m = LayerMask::from_bits(spec);
  require(static_cast<int>(m.size()) == num_layers,
          "mask '" + spec + "' has " + std::to_string(m.size()) + " bits, expected " + std::to_string(num_layers));
  return m;
}

namespace {

torch::Tensor blend_layer(const torch::Tensor& ref, const torch::Tensor& other, const LayerMask& mask, int layer) {
  const auto ch = mask.channels.find(layer);
  if (ch == mask.channels.end()) {
    const double m = mask.layers[static_cast<std::size_t>(layer)];
    if (m == 1.0) return ref.expand_as(other).clone();
    if (m == 0.0) return other;
    return torch::lerp(other, ref.expand_as(other), m);
  }
  const auto weights =
      torch::tensor(ch->second, options_for(torch::kFloat64)).to(other.scalar_type()).view({1, -1});
  const auto r = ref.expand_as(other);
  // where() keeps exact copies for 0/1 channels.
  auto out = torch::lerp(other, r, weights);
  out = torch::where(weights == 1.0, r, out);
  out = torch::where(weights == 0.0, other, out);
  return out;
}

}  // namespace

StyleCode blend_codes(const StyleCode& a, const StyleCode& b, const LayerMask& mask) {
  require(a.num_layers() == mask.size() && b.num_layers() == mask.size(), "blend_codes: mask length mismatch");
  StyleCode out;
  for (std::size_t l = 0; l < mask.size(); ++l)
    out.layers.push_back(blend_layer(a.layers[l], b.layers[l], mask, static_cast<int>(l)));
  if (a.w_plus.size() == mask.size() && b.w_plus.size() == mask.size() && mask.channels.empty())
    for (std::size_t l = 0; l < mask.size(); ++l)
      out.w_plus.push_back(blend_layer(a.w_plus[l], b.w_plus[l], mask, static_cast<int>(l)));
  return out;
}

StyleCode mix_styles_with(const StyleCode& reference, const LayerMask& mask, MixSpace space,
                          const GeneratorParams& gen, const torch::Tensor& z) {
  mask.validate(gen.config);
  require(static_cast<int>(reference.num_layers()) == gen.config.num_layers(),
          "mix_styles: reference code has wrong layer count");
  require(reference.batch() == 1, "mix_styles: reference code must have batch 1");
  const auto w = map_latent(z, gen);
  if (space == MixSpace::S) {
    const auto random = style_from_w(w, gen);
    StyleCode out;
    for (std::size_t l = 0; l < mask.size(); ++l)
      out.layers.push_back(blend_layer(reference.layers[l], random.layers[l], mask, static_cast<int>(l)));
    for (std::size_t l = 0; l < mask.size() && reference.w_plus.size() == mask.size() && mask.channels.empty(); ++l)
      out.w_plus.push_back(blend_layer(reference.w_plus[l], w, mask, static_cast<int>(l)));
    return out;
  }
  require(reference.w_plus.size() == mask.size(), "mix_styles: W-space mixing needs the reference's W vectors");
  require(mask.channels.empty(), "mix_styles: channel masks are only defined in S space");
  std::vector<torch::Tensor> w_plus;
  for (std::size_t l = 0; l < mask.size(); ++l)
    w_plus.push_back(blend_layer(reference.w_plus[l], w, mask, static_cast<int>(l)));
  auto out = style_from_w_plus(w_plus, gen);
  // Layers copied whole from the reference keep its exact style entries.
  for (std::size_t l = 0; l < mask.size(); ++l)
    if (mask.layers[l] == 1.0) out.layers[l] = reference.layers[l].expand_as(out.layers[l]).clone();
  return out;
}

StyleCode mix_styles(const StyleCode& reference, const MixConfig& config, const GeneratorParams& gen,
                     torch::Generator& rng) {
  require(config.batch >= 1, "mix_styles: batch must be >= 1");
  return mix_styles_with(reference, config.mask, config.space, gen,
                         sample_z(config.batch, gen.config, rng, gen.dtype()));
}

}  // namespace jojo
