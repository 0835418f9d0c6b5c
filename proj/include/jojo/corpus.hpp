#pragma once

#include "jojo/common.hpp"

#include <array>
#include <random>
#include <string>
#include <vector>

namespace jojo {

/// Procedural aligned "face" images. They stand in for an aligned face photo
/// corpus: a head roughly centered, with pose, proportions, skin, hair, eye
/// and background variation.
struct FaceParams {
  using Rgb = std::array<double, 3>;  // [0,1]

  double center_x = 0.5, center_y = 0.53;  // fraction of width/height
  double face_w = 0.26, face_h = 0.33;     // semi-axes, fraction of size
  double yaw = 0;                          // [-1,1], shifts inner features
  double eye_size = 1, eye_spacing = 1, eye_height = 0;
  double gaze_x = 0, gaze_y = 0;
  double brow_tilt = 0;
  double mouth_width = 1, smile = 0.5, mouth_open = 0;
  double nose_length = 1;
  double hair_volume = 1, hair_length = 0.3, fringe = 0.5;
  Rgb skin{0.9, 0.72, 0.6}, hair{0.25, 0.15, 0.1}, iris{0.35, 0.22, 0.1}, lips{0.75, 0.3, 0.3};
  Rgb bg_top{0.3, 0.5, 0.7}, bg_bottom{0.6, 0.7, 0.8}, shirt{0.2, 0.3, 0.6};
  bool blush = false;
};

FaceParams random_face(std::mt19937_64& rng);
/// Exaggerated proportions (big eyes, wide mouth) for caricature references.
FaceParams exaggerate(FaceParams face, double amount = 1.0);

/// Renders to a [3, res, res] image in [-1, 1] (3x3 supersampled).
torch::Tensor render_face(const FaceParams& face, int resolution);

/// `count` random faces as a [count, 3, res, res] batch.
torch::Tensor face_corpus(int count, int resolution, std::uint64_t seed);

/// Style filters that turn a rendered face into a non-photorealistic
/// reference. Known names: comic, duotone, sketch, hue_shift, caricature.
torch::Tensor apply_style(const torch::Tensor& image, const std::string& style);
std::vector<std::string> style_names();

/// Reference image: random face, optionally exaggerated, then styled.
torch::Tensor style_reference(const std::string& style, int resolution, std::uint64_t seed);

}  // namespace jojo
