#include <gtest/gtest.h>

#include "jojo/corpus.hpp"
#include "jojo/metrics.hpp"

using namespace jojo;

TEST(Corpus, DeterministicAndBounded) {
  const auto a = face_corpus(6, 32, 3), b = face_corpus(6, 32, 3);
  EXPECT_EQ(a.sizes(), (std::vector<std::int64_t>{6, 3, 32, 32}));
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_FALSE(torch::equal(a, face_corpus(6, 32, 4)));
  EXPECT_GE(a.min().item<double>(), -1.0);
  EXPECT_LE(a.max().item<double>(), 1.0);
  EXPECT_GT((a[0] - a[1]).abs().mean().item<double>(), 0.01);
}

TEST(Corpus, StylesAreKnownAndChangeTheImage) {
  const auto face = face_corpus(1, 32, 1)[0];
  for (const auto& s : style_names()) {
    const auto y = apply_style(face, s);
    EXPECT_EQ(y.sizes(), face.sizes()) << s;
    EXPECT_GT(mean_abs_diff(y, face), 0.01) << s;
    EXPECT_LE(y.abs().max().item<double>(), 1.0) << s;
  }
  EXPECT_THROW(apply_style(face, "oil"), InvalidInput);
  EXPECT_TRUE(torch::equal(style_reference("comic", 32, 9), style_reference("comic", 32, 9)));
}

TEST(Corpus, HueShiftMovesHue) {
  const auto face = face_corpus(1, 32, 2)[0];
  EXPECT_GT(hue_distance(mean_hue(apply_style(face, "hue_shift")), mean_hue(face)), 60.0);
}
