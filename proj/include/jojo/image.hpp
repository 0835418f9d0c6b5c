#pragma once

#include "jojo/common.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace jojo {

// Images are float tensors in [-1, 1]: a single image is [3, H, W], a batch
// is [B, 3, H, W]. PNG files are 8-bit RGB mapped linearly onto [-1, 1].

torch::Tensor decode_png(std::string_view bytes);
std::string encode_png(const torch::Tensor& image);

torch::Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Tiles a [B,3,H,W] batch into one [3, rows*H, cols*W] image.
torch::Tensor make_grid(const torch::Tensor& batch, int cols);

/// Result of bringing an arbitrary image to model resolution.
struct PreparedImage {
  torch::Tensor pixels;  // [3, R, R]
  bool transformed = false;
  std::string transform;  // e.g. "center-crop 80x64 -> 64x64; resize 64 -> 32"
};

/// Center-crops to square and resizes (antialiased bilinear) to `resolution`.
PreparedImage prepare_image(const torch::Tensor& image, int resolution);

/// Shifts an image by whole pixels, replicating the border.
torch::Tensor translate(const torch::Tensor& image, int dx, int dy);

/// Accepts [3,H,W] or [B,3,H,W], returns [B,3,H,W]; checks channels and range.
torch::Tensor as_batch(const torch::Tensor& image);
void check_image(const torch::Tensor& batch, int resolution, const char* what);

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

}  // namespace jojo
