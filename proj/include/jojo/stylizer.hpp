#pragma once

#include "jojo/finetuner.hpp"

#include <optional>

namespace jojo {

/// G(s(T(u)); theta_hat) with feature interpolation between the base trunk
/// (alpha = 0) and the mapper trunk (alpha = 1). `u` may be a single image or
/// a batch; inputs at other resolutions are resized first.
torch::Tensor stylize(const torch::Tensor& input, const GeneratorParams& base, const MapperCheckpoint& mapper,
                      const EncoderParams& enc, double alpha = 1.0);

/// Base generator's reconstruction G(s(T(u)); theta).
torch::Tensor reconstruct(const torch::Tensor& input, const GeneratorParams& base, const EncoderParams& enc);

/// Random stylized sample from the mapper's own mapping net and trunk.
torch::Tensor sample_stylized(const torch::Tensor& z, const MapperCheckpoint& mapper);

struct StylizeOutcome {
  std::optional<torch::Tensor> image;
  std::string error;
};

/// Maps stylize over `inputs` in order; failures are recorded per item and
/// the rest of the batch still runs.
std::vector<StylizeOutcome> stylize_batch(const std::vector<torch::Tensor>& inputs, const GeneratorParams& base,
                                          const MapperCheckpoint& mapper, const EncoderParams& enc,
                                          double alpha = 1.0);

}  // namespace jojo
