#pragma once

#include "jojo/common.hpp"

namespace jojo {

/// Chroma-weighted circular mean hue of an image in degrees [0, 360).
/// Each pixel votes with its HSV hue angle, weighted by its chroma
/// (max - min channel), so near-gray pixels barely count.
double mean_hue(const torch::Tensor& image);

/// Magnitude of the chroma-weighted mean hue vector; small values mean the
/// hue estimate is unstable.
double hue_strength(const torch::Tensor& image);

/// Smallest angle between two hues, in degrees [0, 180].
double hue_distance(double a, double b);

double mean_abs_diff(const torch::Tensor& a, const torch::Tensor& b);
double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace jojo
