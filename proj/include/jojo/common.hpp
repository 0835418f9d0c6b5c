#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace jojo {

/// Raised for shape, dimension or configuration errors on public entry points.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a training run cannot start or has to stop.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named parameter arrays. Ordered by name so iteration is deterministic.
using TensorMap = std::map<std::string, torch::Tensor>;

torch::Generator make_rng(std::uint64_t seed);

/// Deep copy; every tensor is detached and contiguous.
TensorMap clone_tensors(const TensorMap& tensors, bool requires_grad = false);
TensorMap cast_tensors(const TensorMap& tensors, torch::Dtype dtype);
/// True when both maps hold the same names, shapes, dtypes and bytes.
bool bit_equal(const TensorMap& a, const TensorMap& b);
std::int64_t parameter_count(const TensorMap& tensors);

/// Hex SHA-256 over names, shapes and raw bytes.
std::string hash_tensors(const TensorMap& tensors);
std::string sha256_hex(std::string_view bytes);

inline torch::TensorOptions options_for(torch::Dtype dtype) {
  return torch::TensorOptions().dtype(dtype).device(torch::kCPU);
}

// Equalized-learning-rate leaky ReLU (slope 0.2, gain sqrt 2).
inline torch::Tensor lrelu(const torch::Tensor& x) {
  return torch::leaky_relu(x, 0.2) * 1.4142135623730951;
}

void require(bool condition, const std::string& message);

}  // namespace jojo
