#include "jojo/stylizer.hpp"

#include "jojo/log.hpp"

#include <chrono>
#include <cmath>

#include "jojo/image.hpp"

namespace jojo {

torch::Tensor stylize(const torch::Tensor& input, const GeneratorParams& base, const MapperCheckpoint& mapper,
                      const EncoderParams& enc, double alpha) {
  require(std::isfinite(alpha) && alpha >= 0.0 && alpha <= 1.0, "stylize: alpha must lie in [0,1]");
  require(base.same_architecture(mapper.params), "stylize: mapper architecture does not match base generator");
  torch::NoGradGuard no_grad;
  const auto s = style_from_w(invert(as_batch(input).to(enc.dtype()), enc).w, base);
  return synthesize_interpolated(s, base, mapper.params, alpha);
}

torch::Tensor reconstruct(const torch::Tensor& input, const GeneratorParams& base, const EncoderParams& enc) {
  torch::NoGradGuard no_grad;
  return synthesize(style_from_w(invert(as_batch(input).to(enc.dtype()), enc).w, base), base).image;
}

torch::Tensor sample_stylized(const torch::Tensor& z, const MapperCheckpoint& mapper) {
  torch::NoGradGuard no_grad;
  const auto& g = mapper.params;
  return synthesize(style_from_w(map_latent(z, g), g), g).image;
}

std::vector<StylizeOutcome> stylize_batch(const std::vector<torch::Tensor>& inputs, const GeneratorParams& base,
                                          const MapperCheckpoint& mapper, const EncoderParams& enc, double alpha) {
  std::vector<StylizeOutcome> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    StylizeOutcome r;
    try {
      r.image = stylize(inputs[i], base, mapper, enc, alpha)[0];
    } catch (const std::exception& e) {
      r.error = e.what();
      log_warn("stylize_batch: item ", i, " failed: ", e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log_info("stylize_batch: item ", i + 1, "/", inputs.size(), " ", ms, " ms");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace jojo
