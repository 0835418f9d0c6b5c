#include "jojo/corpus.hpp"

#include <algorithm>
#include <cmath>

namespace jojo {

namespace F = torch::nn::functional;

namespace {

using Rgb = FaceParams::Rgb;

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Rgb hsv(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 1.0) + 1.0, 1.0) * 6.0;
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h, 2.0) - 1)), m = v - c;
  Rgb rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Rgb scale(const Rgb& a, double k) { return {a[0] * k, a[1] * k, a[2] * k}; }

bool in_ellipse(double x, double y, double cx, double cy, double a, double b) {
  const double dx = (x - cx) / a, dy = (y - cy) / b;
  return dx * dx + dy * dy <= 1.0;
}

Rgb shade_pixel(const FaceParams& f, double x, double y) {
  // Coordinates in [0,1]; painter's order, back to front.
  Rgb c = mix(f.bg_top, f.bg_bottom, y);
  const double cx = f.center_x, cy = f.center_y, a = f.face_w, b = f.face_h;
  const double shift = f.yaw * a * 0.3;

  if (in_ellipse(x, y, cx, 1.12, a * 1.9, 0.3)) c = f.shirt;
  if (std::abs(x - cx) < a * 0.45 && y > cy && y < cy + b * 1.4) c = scale(f.skin, 0.85);

  const double hair_a = a * (1.08 + 0.2 * f.hair_volume), hair_b = b * (0.95 + 0.15 * f.hair_volume);
  const double hair_cy = cy - b * 0.12;
  if (in_ellipse(x, y, cx, hair_cy, hair_a, hair_b) && y < cy + b * f.hair_length) c = f.hair;

  if (in_ellipse(x, y, cx - a * 0.98, cy + b * 0.05, a * 0.16, b * 0.2) ||
      in_ellipse(x, y, cx + a * 0.98, cy + b * 0.05, a * 0.16, b * 0.2))
    c = scale(f.skin, 0.9);
  if (in_ellipse(x, y, cx, cy, a, b)) {
    c = f.skin;
    // Soft side shading opposite to the yaw.
    const double side = (x - cx - shift) / a;
    c = scale(c, 1.0 - 0.12 * std::max(0.0, side * (f.yaw >= 0 ? 1 : -1)));
  }
  const double fringe_line = cy - b * (0.75 - 0.3 * f.fringe) + 0.02 * std::sin((x - cx) * 40.0);
  if (in_ellipse(x, y, cx, hair_cy, hair_a, hair_b) && y < fringe_line) c = f.hair;

  if (f.blush) {
    for (double side : {-1.0, 1.0})
      if (in_ellipse(x, y, cx + shift + side * a * 0.55, cy + b * 0.22, a * 0.18, b * 0.1))
        c = mix(c, {0.95, 0.45, 0.45}, 0.35);
  }

  const double eye_y = cy - b * (0.12 - 0.1 * f.eye_height);
  const double eye_dx = a * 0.42 * f.eye_spacing;
  const double ew = a * 0.22 * f.eye_size, eh = b * 0.09 * f.eye_size;
  for (double side : {-1.0, 1.0}) {
    const double ex = cx + shift + side * eye_dx;
    const double by = eye_y - eh * 2.1 + side * f.brow_tilt * 0.02 * ((x - ex) / ew);
    if (std::abs(x - ex) < ew * 1.1 && std::abs(y - by) < b * 0.035) c = scale(f.hair, 0.7);
    if (in_ellipse(x, y, ex, eye_y, ew, eh)) {
      c = {0.96, 0.96, 0.94};
      const double ix = ex + f.gaze_x * ew * 0.4, iy = eye_y + f.gaze_y * eh * 0.3;
      if (in_ellipse(x, y, ix, iy, eh * 0.95, eh * 0.95)) c = f.iris;
      if (in_ellipse(x, y, ix, iy, eh * 0.45, eh * 0.45)) c = {0.05, 0.05, 0.05};
    }
  }

  const double nose_x = cx + shift * 1.3;
  const double nose_top = cy - b * 0.02, nose_bottom = cy + b * (0.18 + 0.1 * (f.nose_length - 1));
  if (y > nose_top && y < nose_bottom && std::abs(x - nose_x) < a * 0.06 * (y - nose_top) / (nose_bottom - nose_top + 1e-9) + 0.008)
    c = scale(f.skin, 0.8);

  const double mx = cx + shift, my = cy + b * 0.45;
  const double mw = a * 0.38 * f.mouth_width, mh = b * (0.05 + 0.12 * f.mouth_open);
  const double curve = f.smile * 0.08 * std::pow((x - mx) / mw, 2.0);
  if (in_ellipse(x, y + curve, mx, my, mw, mh)) c = f.mouth_open > 0.3 ? Rgb{0.3, 0.05, 0.08} : f.lips;
  if (f.mouth_open > 0.3 && in_ellipse(x, y + curve, mx, my, mw, mh) && !in_ellipse(x, y + curve, mx, my, mw * 0.9, mh * 0.6))
    c = f.lips;
  return c;
}

}  // namespace

FaceParams random_face(std::mt19937_64& rng) {
  FaceParams f;
  f.center_x = 0.5 + uniform(rng, -0.04, 0.04);
  f.center_y = 0.53 + uniform(rng, -0.03, 0.03);
  f.face_w = uniform(rng, 0.21, 0.3);
  f.face_h = uniform(rng, 0.28, 0.36);
  f.yaw = uniform(rng, -1, 1);
  f.eye_size = uniform(rng, 0.75, 1.25);
  f.eye_spacing = uniform(rng, 0.85, 1.15);
  f.eye_height = uniform(rng, -0.5, 0.5);
  f.gaze_x = uniform(rng, -1, 1);
  f.gaze_y = uniform(rng, -0.5, 0.5);
  f.brow_tilt = uniform(rng, -1, 1);
  f.mouth_width = uniform(rng, 0.7, 1.3);
  f.smile = uniform(rng, -0.5, 1.5);
  f.mouth_open = std::max(0.0, uniform(rng, -0.6, 1.0));
  f.nose_length = uniform(rng, 0.7, 1.3);
  f.hair_volume = uniform(rng, 0, 1.5);
  f.hair_length = uniform(rng, -0.2, 1.2);
  f.fringe = uniform(rng, 0, 1);

  static const Rgb kSkinLight{0.96, 0.8, 0.68}, kSkinDark{0.45, 0.3, 0.2};
  f.skin = mix(kSkinLight, kSkinDark, uniform(rng, 0, 1));
  static const std::array<Rgb, 6> kHair{{{0.08, 0.06, 0.05}, {0.35, 0.2, 0.1}, {0.85, 0.7, 0.4},
                                         {0.65, 0.25, 0.1}, {0.7, 0.7, 0.72}, {0.5, 0.35, 0.2}}};
  f.hair = scale(kHair[std::uniform_int_distribution<std::size_t>(0, kHair.size() - 1)(rng)], uniform(rng, 0.85, 1.1));
  static const std::array<Rgb, 4> kIris{{{0.35, 0.2, 0.08}, {0.2, 0.45, 0.75}, {0.25, 0.5, 0.3}, {0.15, 0.1, 0.05}}};
  f.iris = kIris[std::uniform_int_distribution<std::size_t>(0, kIris.size() - 1)(rng)];
  f.lips = hsv(uniform(rng, -0.03, 0.03), uniform(rng, 0.4, 0.7), uniform(rng, 0.55, 0.85));
  const double bg_hue = uniform(rng, 0, 1);
  f.bg_top = hsv(bg_hue, uniform(rng, 0.3, 0.8), uniform(rng, 0.35, 0.9));
  f.bg_bottom = hsv(bg_hue + uniform(rng, -0.1, 0.1), uniform(rng, 0.3, 0.8), uniform(rng, 0.35, 0.9));
  f.shirt = hsv(uniform(rng, 0, 1), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8));
  f.blush = uniform(rng, 0, 1) < 0.3;
  return f;
}

FaceParams exaggerate(FaceParams f, double amount) {
  f.eye_size *= 1.0 + 0.5 * amount;
  f.mouth_width *= 1.0 + 0.25 * amount;
  f.face_w *= 1.0 + 0.08 * amount;
  f.nose_length *= 1.0 - 0.3 * amount;
  f.smile += 0.5 * amount;
  return f;
}

torch::Tensor render_face(const FaceParams& face, int resolution) {
  auto out = torch::empty({resolution, resolution, 3}, torch::kFloat32);
  auto* px = out.data_ptr<float>();
  constexpr int kSuper = 3;
  for (int py = 0; py < resolution; ++py) {
    for (int pxi = 0; pxi < resolution; ++pxi) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = (pxi + (sx + 0.5) / kSuper) / resolution;
          const double y = (py + (sy + 0.5) / kSuper) / resolution;
          const auto c = shade_pixel(face, x, y);
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
        }
      for (int k = 0; k < 3; ++k) {
        const double v = std::clamp(acc[static_cast<std::size_t>(k)] / (kSuper * kSuper), 0.0, 1.0);
        px[(py * resolution + pxi) * 3 + k] = static_cast<float>(v * 2.0 - 1.0);
      }
    }
  }
  return out.permute({2, 0, 1}).contiguous();
}

torch::Tensor face_corpus(int count, int resolution, std::uint64_t seed) {
  require(count >= 1, "face_corpus: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<torch::Tensor> images;
  images.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) images.push_back(render_face(random_face(rng), resolution));
  return torch::stack(images);
}

namespace {

torch::Tensor luminance(const torch::Tensor& x) {
  // x: [3,H,W] in [0,1]
  return (0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]).unsqueeze(0);
}

torch::Tensor edges(const torch::Tensor& lum) {
  const auto kx = torch::tensor({-1.0f, 0.0f, 1.0f, -2.0f, 0.0f, 2.0f, -1.0f, 0.0f, 1.0f}).view({1, 1, 3, 3});
  const auto ky = kx.transpose(2, 3).contiguous();
  const auto padded = F::pad(lum.unsqueeze(0), F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  const auto gx = F::conv2d(padded, kx), gy = F::conv2d(padded, ky);
  return (gx.square() + gy.square()).sqrt().squeeze(0);  // [1,H,W]
}

torch::Tensor rotate_hue(const torch::Tensor& x, double degrees) {
  // Rotation about the gray axis in RGB space.
  const double a = degrees * M_PI / 180.0, c = std::cos(a), s = std::sin(a), k = (1 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
  const auto m = torch::tensor({c + k, k - r, k + r, k + r, c + k, k - r, k - r, k + r, c + k}, torch::kFloat32).view({3, 3});
  return torch::mm(m, x.reshape({3, -1})).reshape(x.sizes()).clamp(0, 1);
}

torch::Tensor posterize(const torch::Tensor& x, double levels) { return (x * (levels - 1)).round() / (levels - 1); }

torch::Tensor colorize(const torch::Tensor& lum, const Rgb& dark, const Rgb& light) {
  const auto d = torch::tensor({dark[0], dark[1], dark[2]}, torch::kFloat32).view({3, 1, 1});
  const auto l = torch::tensor({light[0], light[1], light[2]}, torch::kFloat32).view({3, 1, 1});
  return d + (l - d) * lum;
}

}  // namespace

torch::Tensor apply_style(const torch::Tensor& image, const std::string& style) {
  require(image.dim() == 3 && image.size(0) == 3, "apply_style: expected [3,H,W]");
  const auto x = ((image.to(torch::kFloat32) + 1) * 0.5).clamp(0, 1);
  torch::Tensor y;
  if (style == "comic") {
    const auto outline = (edges(luminance(x)) > 0.6).to(torch::kFloat32);
    const auto toned = rotate_hue(posterize(x, 4) * 1.1, 110.0);
    y = toned * (1 - outline);
  } else if (style == "duotone") {
    y = colorize(posterize(luminance(x), 5), {0.1, 0.05, 0.35}, {1.0, 0.45, 0.7});
  } else if (style == "sketch") {
    const auto strokes = (1 - 1.6 * edges(luminance(x))).clamp(0, 1);
    y = colorize(strokes * (0.75 + 0.25 * luminance(x)), {0.2, 0.15, 0.1}, {0.96, 0.92, 0.82});
  } else if (style == "hue_shift") {
    y = posterize(rotate_hue(x, 200.0), 6);
  } else if (style == "caricature") {
    const auto outline = (edges(luminance(x)) > 0.5).to(torch::kFloat32);
    y = posterize(x, 5) * (1 - 0.8 * outline);
  } else {
    throw InvalidInput("unknown style '" + style + "'");
  }
  return (y.clamp(0, 1) * 2 - 1).contiguous();
}

std::vector<std::string> style_names() { return {"comic", "duotone", "sketch", "hue_shift", "caricature"}; }

torch::Tensor style_reference(const std::string& style, int resolution, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto face = random_face(rng);
  if (style == "caricature") face = exaggerate(face, 1.0);
  return apply_style(render_face(face, resolution), style);
}

}  // namespace jojo
