#include "jojo/metrics.hpp"

#include <cmath>

#include "jojo/image.hpp"

namespace jojo {

namespace {

// Sum of chroma-weighted unit hue vectors, as (x, y, total weight).
std::array<double, 3> hue_vector(const torch::Tensor& image) {
  const auto x = ((as_batch(image).to(torch::kFloat64) + 1) * 0.5).clamp(0, 1);
  const auto r = x.select(1, 0), g = x.select(1, 1), b = x.select(1, 2);
  const auto mx = torch::max(torch::max(r, g), b);
  const auto mn = torch::min(torch::min(r, g), b);
  const auto chroma = mx - mn;
  const auto safe = chroma.clamp_min(1e-12);
  // Hexagonal hue in sextants, as in HSV.
  auto h = torch::where(mx == r, ((g - b) / safe).remainder(6.0),
                        torch::where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0));
  h = h * (M_PI / 3.0);
  return {(chroma * torch::cos(h)).sum().item<double>(), (chroma * torch::sin(h)).sum().item<double>(),
          static_cast<double>(chroma.numel())};
}

}  // namespace

double mean_hue(const torch::Tensor& image) {
  const auto v = hue_vector(image);
  double deg = std::atan2(v[1], v[0]) * 180.0 / M_PI;
  if (deg < 0) deg += 360.0;
  return deg;
}

double hue_strength(const torch::Tensor& image) {
  const auto v = hue_vector(image);
  return std::hypot(v[0], v[1]) / v[2];
}

double hue_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

double mean_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().mean().item<double>();
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace jojo
