#include "jojo/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>

#include "jojo/archive.hpp"

namespace jojo {

namespace {

struct ReadCursor {
  std::string_view bytes;
  std::size_t pos = 0;
};

void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes.size()) png_error(png, "truncated png");
  std::memcpy(out, cur->bytes.data() + cur->pos, n);
  cur->pos += n;
}

void write_callback(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void flush_callback(png_structp) {}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw InvalidInput(std::string("png: ") + msg); }

void png_warn(png_structp, png_const_charp) {}

}  // namespace

torch::Tensor decode_png(std::string_view bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw InvalidInput("png: not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  torch::Tensor out;
  try {
    png_set_read_fn(png, &cursor, read_callback);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_set_packing(png);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    if (png_get_channels(png, info) != 3) png_error(png, "unsupported channel layout");
    auto raw = torch::empty({static_cast<long>(h), static_cast<long>(w), 3}, torch::kUInt8);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data_ptr<std::uint8_t>() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    out = raw.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

std::string encode_png(const torch::Tensor& image) {
  require(image.dim() == 3 && image.size(0) == 3, "png: expected a [3,H,W] image");
  const auto h = static_cast<png_uint_32>(image.size(1));
  const auto w = static_cast<png_uint_32>(image.size(2));
  const auto raw = image.detach()
                       .to(torch::kFloat64)
                       .add(1.0)
                       .mul(127.5)
                       .round()
                       .clamp(0, 255)
                       .to(torch::kUInt8)
                       .permute({1, 2, 0})
                       .contiguous();
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, write_callback, flush_callback);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    auto* base = const_cast<std::uint8_t*>(raw.data_ptr<std::uint8_t>());
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = base + static_cast<std::size_t>(y) * w * 3;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

torch::Tensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  write_file(path, encode_png(image.dim() == 4 ? make_grid(image, static_cast<int>(image.size(0))) : image));
}

torch::Tensor make_grid(const torch::Tensor& batch, int cols) {
  require(batch.dim() == 4 && batch.size(1) == 3, "make_grid: expected [B,3,H,W]");
  const auto b = batch.size(0);
  cols = std::max<int>(1, std::min<int>(cols, static_cast<int>(b)));
  const auto rows = (b + cols - 1) / cols;
  const auto h = batch.size(2), w = batch.size(3);
  auto grid = torch::full({3, rows * h, cols * w}, -1.0, batch.options());
  for (std::int64_t i = 0; i < b; ++i) {
    const auto r = i / cols, c = i % cols;
    grid.slice(1, r * h, (r + 1) * h).slice(2, c * w, (c + 1) * w).copy_(batch[i]);
  }
  return grid.detach();
}

PreparedImage prepare_image(const torch::Tensor& image, int resolution) {
  require(image.dim() == 3 && image.size(0) == 3, "prepare_image: expected [3,H,W]");
  PreparedImage out;
  auto x = image;
  const auto h = x.size(1), w = x.size(2);
  if (h != w) {
    const auto side = std::min(h, w);
    x = x.slice(1, (h - side) / 2, (h - side) / 2 + side).slice(2, (w - side) / 2, (w - side) / 2 + side);
    out.transform = "center-crop " + std::to_string(w) + "x" + std::to_string(h) + " -> " + std::to_string(side) +
                    "x" + std::to_string(side);
    out.transformed = true;
  }
  if (x.size(1) != resolution) {
    if (out.transformed) out.transform += "; ";
    out.transform += "resize " + std::to_string(x.size(1)) + " -> " + std::to_string(resolution);
    out.transformed = true;
    namespace F = torch::nn::functional;
    x = F::interpolate(x.unsqueeze(0), F::InterpolateFuncOptions()
                                           .size(std::vector<int64_t>{resolution, resolution})
                                           .mode(torch::kBilinear)
                                           .align_corners(false)
                                           .antialias(true))
            .squeeze(0);
  }
  out.pixels = x.clamp(-1.0, 1.0).contiguous();
  return out;
}

torch::Tensor translate(const torch::Tensor& image, int dx, int dy) {
  const bool single = image.dim() == 3;
  auto x = single ? image.unsqueeze(0) : image;
  const auto h = x.size(2), w = x.size(3);
  auto rows = (torch::arange(h) - dy).clamp(0, h - 1);
  auto cols = (torch::arange(w) - dx).clamp(0, w - 1);
  x = x.index_select(2, rows).index_select(3, cols);
  return single ? x.squeeze(0) : x;
}

torch::Tensor as_batch(const torch::Tensor& image) {
  require(image.defined(), "image: undefined tensor");
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  require(x.dim() == 4 && x.size(1) == 3, "image: expected [3,H,W] or [B,3,H,W]");
  return x;
}

void check_image(const torch::Tensor& batch, int resolution, const char* what) {
  require(batch.dim() == 4 && batch.size(1) == 3, std::string(what) + ": expected [B,3,H,W]");
  require(batch.size(2) == resolution && batch.size(3) == resolution,
          std::string(what) + ": expected resolution " + std::to_string(resolution) + ", got " +
              std::to_string(batch.size(2)) + "x" + std::to_string(batch.size(3)));
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace jojo
