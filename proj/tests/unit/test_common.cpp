#include <gtest/gtest.h>

#include "helpers.hpp"
#include "jojo/archive.hpp"
#include "jojo/image.hpp"
#include "jojo/metrics.hpp"

#include <fstream>

using namespace jojo;

TEST(Common, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Common, SeededGeneratorsRepeat) {
  auto a = make_rng(7), b = make_rng(7), c = make_rng(8);
  const auto x = torch::randn({16}, a), y = torch::randn({16}, b), z = torch::randn({16}, c);
  EXPECT_TRUE(torch::equal(x, y));
  EXPECT_FALSE(torch::equal(x, z));
}

TEST(Common, BitEqualAndHash) {
  TensorMap a{{"x", torch::arange(6, torch::kFloat32).view({2, 3})}};
  auto b = clone_tensors(a);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_EQ(hash_tensors(a), hash_tensors(b));
  b["x"][0][0] = -0.0f;  // +0 and -0 compare equal but differ in bytes
  EXPECT_FALSE(bit_equal(a, b));
  EXPECT_NE(hash_tensors(a), hash_tensors(b));
  TensorMap c{{"x", torch::arange(6, torch::kFloat32).view({3, 2})}};
  EXPECT_FALSE(bit_equal(a, c));
  EXPECT_NE(hash_tensors(a), hash_tensors(c));
  EXPECT_EQ(parameter_count(a), 6);
}

TEST(Common, RequireThrowsInvalidInput) {
  EXPECT_NO_THROW(require(true, "fine"));
  EXPECT_THROW(require(false, "bad"), InvalidInput);
}

TEST(Archive, RoundTripAllDtypes) {
  Archive a;
  a.meta["kind"] = "test";
  a.meta["nested"] = {{"k", 3}};
  a.tensors["g/f32"] = torch::randn({2, 3});
  a.tensors["g/f64"] = torch::randn({4}, torch::kFloat64);
  a.tensors["g/i64"] = torch::arange(5);
  a.tensors["scalar"] = torch::tensor(2.5);
  const auto back = Archive::from_bytes(a.to_bytes());
  EXPECT_EQ(back.meta, a.meta);
  EXPECT_TRUE(bit_equal(back.tensors, a.tensors));
  EXPECT_TRUE(back.has("g"));
  EXPECT_FALSE(back.has("h"));
  EXPECT_EQ(back.get("g").size(), 3u);
  EXPECT_TRUE(back.get("g").count("f64"));
}

TEST(Archive, BytesAreDeterministic) {
  Archive a, b;
  a.tensors["z"] = torch::ones({3});
  a.tensors["a"] = torch::zeros({2});
  b.tensors["a"] = torch::zeros({2});
  b.tensors["z"] = torch::ones({3});
  a.meta["x"] = 1;
  b.meta["x"] = 1;
  EXPECT_EQ(a.to_bytes(), b.to_bytes());
  EXPECT_EQ(a.to_bytes().substr(0, 8), "JOJOCKPT");
}

TEST(Archive, RejectsCorruptInput) {
  Archive a;
  a.tensors["t"] = torch::ones({16});
  const auto bytes = a.to_bytes();
  EXPECT_THROW(Archive::from_bytes("NOTACKPT" + bytes.substr(8)), InvalidInput);
  EXPECT_THROW(Archive::from_bytes(bytes.substr(0, bytes.size() - 4)), InvalidInput);
  EXPECT_THROW(Archive::from_bytes(bytes.substr(0, 10)), InvalidInput);
  EXPECT_THROW(Archive::from_bytes(""), InvalidInput);
}

TEST(Archive, RejectsUnsupportedDtype) {
  Archive a;
  a.tensors["t"] = torch::ones({2}, torch::kInt8);
  EXPECT_THROW(a.to_bytes(), InvalidInput);
}

TEST(Archive, SaveLoadFile) {
  const auto dir = testkit::temp_dir("archive");
  Archive a;
  a.tensors["t"] = torch::randn({4, 4});
  a.save(dir / "x.ckpt");
  EXPECT_TRUE(bit_equal(Archive::load(dir / "x.ckpt").tensors, a.tensors));
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ckpt.tmp"));
  EXPECT_THROW(Archive::load(dir / "missing.ckpt"), std::exception);
}

TEST(Image, PngRoundTripWithinQuantization) {
  const auto x = testkit::random_images(1, 16, 3, torch::kFloat32)[0];
  const auto back = decode_png(encode_png(x));
  EXPECT_EQ(back.sizes(), x.sizes());
  EXPECT_LE((back - x).abs().max().item<double>(), 1.0 / 255.0 + 1e-6);
  // Quantized values survive exactly.
  EXPECT_TRUE(torch::equal(decode_png(encode_png(back)), back));
}

TEST(Image, PngEndpointsMapToUnitRange) {
  const auto x = torch::stack({torch::full({2, 2}, -1.0), torch::full({2, 2}, 1.0), torch::zeros({2, 2})}).to(torch::kFloat32);
  const auto back = decode_png(encode_png(x));
  EXPECT_EQ(back[0].min().item<float>(), -1.0f);
  EXPECT_EQ(back[1].max().item<float>(), 1.0f);
}

TEST(Image, DecodeRejectsGarbage) {
  EXPECT_THROW(decode_png("definitely not a png"), InvalidInput);
  EXPECT_THROW(decode_png(""), InvalidInput);
  const auto png = encode_png(torch::zeros({3, 4, 4}));
  EXPECT_THROW(decode_png(png.substr(0, png.size() / 2)), InvalidInput);
}

TEST(Image, PrepareCropsAndResizes) {
  const auto wide = torch::zeros({3, 40, 60});
  const auto p = prepare_image(wide, 16);
  EXPECT_EQ(p.pixels.sizes(), (std::vector<std::int64_t>{3, 16, 16}));
  EXPECT_TRUE(p.transformed);
  EXPECT_NE(p.transform.find("center-crop"), std::string::npos);
  EXPECT_NE(p.transform.find("resize 40 -> 16"), std::string::npos);
  const auto same = prepare_image(torch::zeros({3, 16, 16}), 16);
  EXPECT_FALSE(same.transformed);
  EXPECT_THROW(prepare_image(torch::zeros({1, 16, 16}), 16), InvalidInput);
}

TEST(Image, TranslateReplicatesBorder) {
  auto x = torch::arange(16, torch::kFloat32).view({1, 4, 4}).repeat({3, 1, 1});
  const auto t = translate(x, 1, 0);
  EXPECT_TRUE(torch::equal(t.select(2, 0), x.select(2, 0)));
  EXPECT_TRUE(torch::equal(t.slice(2, 1), x.slice(2, 0, 3)));
  EXPECT_TRUE(torch::equal(translate(x, 0, 0), x));
}

TEST(Image, GridLayout) {
  const auto b = torch::arange(5, torch::kFloat32).view({5, 1, 1, 1}).expand({5, 3, 2, 2}) / 5;
  const auto g = make_grid(b, 2);
  EXPECT_EQ(g.sizes(), (std::vector<std::int64_t>{3, 6, 4}));
  EXPECT_FLOAT_EQ(g[0][0][2].item<float>(), 0.2f);
  EXPECT_FLOAT_EQ(g[0][4][0].item<float>(), 0.8f);
}

TEST(Image, FileRoundTripAndListing) {
  const auto dir = testkit::temp_dir("images");
  write_png(dir / "b.png", torch::zeros({3, 8, 8}));
  write_png(dir / "a.png", torch::ones({3, 8, 8}));
  std::ofstream(dir / "c.txt") << "x";
  const auto files = list_pngs(dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "a.png");
  EXPECT_EQ(read_png(files[0]).min().item<float>(), 1.0f);
}

TEST(Metrics, HueOfPrimaries) {
  auto solid = [](double r, double g, double b) {
    return torch::stack({torch::full({4, 4}, r), torch::full({4, 4}, g), torch::full({4, 4}, b)}) * 2 - 1;
  };
  EXPECT_NEAR(mean_hue(solid(1, 0, 0)), 0.0, 1e-6);
  EXPECT_NEAR(mean_hue(solid(0, 1, 0)), 120.0, 1e-6);
  EXPECT_NEAR(mean_hue(solid(0, 0, 1)), 240.0, 1e-6);
  EXPECT_NEAR(mean_hue(solid(1, 1, 0)), 60.0, 1e-6);
  EXPECT_NEAR(hue_strength(solid(0.5, 0.5, 0.5)), 0.0, 1e-9);
  // Half red, half green: circular mean sits at 60 degrees.
  auto mixed = solid(1, 0, 0);
  mixed.slice(2, 2) = solid(0, 1, 0).slice(2, 2);
  EXPECT_NEAR(mean_hue(mixed), 60.0, 1e-6);
}

TEST(Metrics, HueDistanceWrapsAround) {
  EXPECT_DOUBLE_EQ(hue_distance(350, 10), 20);
  EXPECT_DOUBLE_EQ(hue_distance(10, 350), 20);
  EXPECT_DOUBLE_EQ(hue_distance(0, 180), 180);
  EXPECT_DOUBLE_EQ(hue_distance(90, 90), 0);
}

TEST(Metrics, Differences) {
  const auto a = torch::zeros({3, 2, 2}), b = torch::full({3, 2, 2}, 0.5);
  EXPECT_DOUBLE_EQ(mean_abs_diff(a, b), 0.5);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.5);
}
