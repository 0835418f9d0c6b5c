#pragma once

#include "jojo/finetuner.hpp"
#include "jojo/models.hpp"

#include <filesystem>

namespace jojo::testkit {

// Small untrained models that run in milliseconds. The critic is 16x16 so it
// has enough resblocks for multi-tap feature matching.
struct TinyModels {
  GeneratorParams gen;
  DiscriminatorParams critic;
  EncoderParams enc;
};

inline GeneratorConfig small_config(int resolution = 16) {
  GeneratorConfig c;
  c.resolution = resolution;
  c.z_dim = c.w_dim = 8;
  c.mapping_layers = 2;
  c.channels.assign(static_cast<std::size_t>(std::countr_zero(static_cast<unsigned>(resolution)) - 1), 8);
  return c;
}

inline TinyModels tiny_models(torch::Dtype dtype = torch::kFloat64, int resolution = 16, std::uint64_t seed = 3) {
  TinyModels m;
  m.gen = init_generator(small_config(resolution), seed, dtype);
  m.gen.trained_steps = 1;
  m.critic = init_critic(CriticConfig::matching(m.gen.config), seed + 1, dtype);
  torch::Tensor w_mean;
  {
    torch::NoGradGuard no_grad;
    auto rng = make_rng(seed + 2);
    w_mean = map_latent(sample_z(256, m.gen.config, rng, dtype), m.gen).mean(0);
  }
  m.enc = init_encoder(EncoderConfig::matching(m.gen.config), w_mean, seed + 3, dtype);
  return m;
}

inline torch::Tensor random_images(std::int64_t n, int resolution, std::uint64_t seed,
                                   torch::Dtype dtype = torch::kFloat64) {
  auto rng = make_rng(seed);
  return torch::rand({n, 3, resolution, resolution}, rng, options_for(dtype)) * 2 - 1;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("jojo_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace jojo::testkit
