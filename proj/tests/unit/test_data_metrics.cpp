#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dckd/data.hpp"
#include "dckd/errors.hpp"
#include "dckd/metrics.hpp"
#include "test_util.hpp"

using namespace dckd;
using namespace dckd::test;
namespace fs = std::filesystem;

namespace {

// Single-window SSIM on an 11x11 gray image pair.
double ssim_single_window(const Image& a, const Image& b) {
  double w[11][11], total = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      w[y][x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
      total += w[y][x];
    }
  double ma = 0, mb = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      ma += w[y][x] / total * a.at(y, x, 0);
      mb += w[y][x] / total * b.at(y, x, 0);
    }
  double va = 0, vb = 0, cov = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      const double k = w[y][x] / total;
      va += k * (a.at(y, x, 0) - ma) * (a.at(y, x, 0) - ma);
      vb += k * (b.at(y, x, 0) - mb) * (b.at(y, x, 0) - mb);
      cov += k * (a.at(y, x, 0) - ma) * (b.at(y, x, 0) - mb);
    }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

Image gray_to_rgb(const Image& g) {
  Image out(g.height(), g.width(), 3);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = g.at(y, x, 0);
  return out;
}

}  // namespace

TEST(Corpus, DeterministicQuantizedAndInRange) {
  const auto a = make_toy_corpus(7, 3, 32);
  const auto b = make_toy_corpus(7, 3, 32);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    for (double v : a[i].values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_NEAR(v * 255.0, std::round(v * 255.0), 1e-9);
    }
  }
  EXPECT_FALSE(make_toy_corpus(8, 1, 32)[0] == a[0]);
  EXPECT_THROW(make_toy_corpus(1, 0, 32), ParameterError);
}

TEST(Corpus, HasLowAndHighFrequencyContent) {
  // Mean absolute horizontal gradient well above zero but far below a pure checkerboard.
  for (const auto& img : make_toy_corpus(1, 8, 64)) {
    double g = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 1; x < 64; ++x) g += std::abs(img.at(y, x, 0) - img.at(y, x - 1, 0));
    g /= 64.0 * 63.0;
    EXPECT_GT(g, 1e-3);
    EXPECT_LT(g, 0.5);
  }
}

TEST(Corpus, SixtyFourImagesQuickly) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = make_toy_corpus(3, 64, 64);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(c.size(), 64u);
  EXPECT_LT(s, 5.0);
}

TEST(SynthPair, ShapesAndIdentity) {
  const Image gt = make_toy_corpus(1, 1, 32)[0];
  const PairedSample p = synth_pair(gt, 2);
  EXPECT_EQ(p.lq.height(), 16);
  EXPECT_EQ(p.lq.width(), 16);
  EXPECT_EQ(p.gt, gt);
  EXPECT_EQ(p.scale, 2);
  EXPECT_FALSE(p.degradation.empty());
  EXPECT_EQ(synth_pair(gt, 1).lq, gt);
  const PairedSample c = synth_pair(Image(8, 8, 3, 0.3), 2);
  for (double v : c.lq.values()) EXPECT_NEAR(v, 0.3, 1e-15);
  EXPECT_THROW(synth_pair(Image(9, 8, 3), 2), ShapeError);
}

TEST(Augment, FlipsAreInvolutions) {
  Rng rng(1);
  const Image x = random_tensor(5, 7, 3, rng);
  EXPECT_EQ(flip_horizontal(flip_horizontal(x)), x);
  EXPECT_EQ(flip_vertical(flip_vertical(x)), x);
  EXPECT_EQ(transpose(transpose(x)), x);
  EXPECT_EQ(apply_augmentation(x, {}), x);
  EXPECT_EQ(flip_horizontal(x).at(0, 0, 1), x.at(0, 6, 1));
  EXPECT_EQ(transpose(x).height(), 7);
}

TEST(Augment, CropKeepsAlignment) {
  const Image gt = make_toy_corpus(2, 1, 32)[0];
  const PairedSample s = synth_pair(gt, 2);
  const PairedSample c = crop_pair(s, 4, 3, 5);
  EXPECT_EQ(c.lq.at(0, 0, 0), s.lq.at(3, 5, 0));
  EXPECT_EQ(c.gt.at(0, 0, 0), s.gt.at(6, 10, 0));
  EXPECT_EQ(c.gt.height(), 8);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const PairedSample a = crop_augment(s, 6, rng);
    EXPECT_EQ(a.gt.height(), 2 * a.lq.height());
    EXPECT_EQ(a.gt.width(), 2 * a.lq.width());
    // Re-synthesizing the lq from the augmented gt reproduces it: same transform applied to both.
    EXPECT_EQ(a.lq.height(), 6);
  }
  EXPECT_THROW(crop_augment(s, 17, rng), ParameterError);
}

TEST(Augment, SameTransformOnBothSides) {
  // With a gt whose bilinear downsample commutes with flips, lq and gt stay consistent.
  const Image gt = make_toy_corpus(3, 1, 16)[0];
  const PairedSample s = synth_pair(gt, 2);
  Rng rng(11);
  for (int i = 0; i < 30; ++i) {
    const PairedSample a = crop_augment(s, 8, rng);
    const PairedSample re = synth_pair(a.gt, 2);
    for (std::size_t k = 0; k < a.lq.size(); ++k) EXPECT_NEAR(re.lq[k], a.lq[k], 1e-12);
  }
}

TEST(Ppm, RoundTripIsLosslessForQuantizedImages) {
  const auto imgs = make_toy_corpus(4, 2, 16);
  const auto dir = fs::temp_directory_path() / "dckd_corpus_test";
  fs::remove_all(dir);
  save_corpus(dir, imgs, 4, 16);
  EXPECT_EQ(read_ppm(dir / "img_0000.ppm"), imgs[0]);
  EXPECT_EQ(read_ppm(dir / "img_0001.ppm"), imgs[1]);
  std::ifstream in(dir / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["count"], 2);
  EXPECT_THROW(read_ppm(dir / "manifest.json"), LoadError);
  fs::remove_all(dir);
}

TEST(Psnr, UniformDifferenceOracles) {
  const Image a(16, 16, 3, 0.5);
  EXPECT_NEAR(psnr(a, Image(16, 16, 3, 0.6), ChannelMode::rgb), 20.0, 1e-9);
  EXPECT_NEAR(psnr(a, Image(16, 16, 3, 0.6), ChannelMode::y), 20.0, 1e-9);
  EXPECT_NEAR(psnr(a, Image(16, 16, 3, 0.5 + 1.0 / 255), ChannelMode::rgb), 20 * std::log10(255.0), 1e-9);
  EXPECT_NEAR(20 * std::log10(255.0), 48.13, 0.01);
}

TEST(Psnr, IdenticalIsInfiniteAndReportedCapped) {
  const Image a(12, 12, 3, 0.2);
  const MetricResult m = evaluate(a, a, ChannelMode::y);
  EXPECT_TRUE(std::isinf(m.psnr_db));
  EXPECT_EQ(m.reported_psnr(), 100.0);
  EXPECT_EQ(m.ssim, 1.0);
}

TEST(Psnr, StrictlyDecreasingInDifference) {
  const Image a(8, 8, 3, 0.3);
  double prev = 1e9;
  for (double d = 0.01; d < 0.6; d += 0.05) {
    const double p = psnr(a, Image(8, 8, 3, 0.3 + d), ChannelMode::rgb);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Psnr, YUsesBt601) {
  Image a(4, 4, 3, 0.0), b(4, 4, 3, 0.0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) b.at(y, x, 0) = 0.5;  // red only: luma diff 0.299*0.5
  const double d = 0.299 * 0.5;
  EXPECT_NEAR(psnr(a, b, ChannelMode::y), 10 * std::log10(1.0 / (d * d)), 1e-9);
  EXPECT_THROW(psnr(a, Image(4, 3, 3), ChannelMode::y), StructuralError);
  EXPECT_EQ(parse_channel_mode("Y"), ChannelMode::y);
  EXPECT_EQ(parse_channel_mode("RGB"), ChannelMode::rgb);
}

TEST(Ssim, IdentityIsExactlyOne) {
  Rng rng(1);
  const Image x = random_tensor(20, 17, 3, rng);
  EXPECT_EQ(ssim(x, x, ChannelMode::y), 1.0);
  EXPECT_EQ(ssim(x, x, ChannelMode::rgb), 1.0);
}

TEST(Ssim, InvertedBinaryPatternMatchesWindowOracle) {
  Image g(11, 11, 1);
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) g.at(y, x, 0) = ((x / 2 + y) % 2 == 0) ? 1.0 : 0.0;
  Image inv = g;
  for (double& v : inv.values()) v = 1.0 - v;
  const double want = ssim_single_window(g, inv);
  const double got = ssim(gray_to_rgb(g), gray_to_rgb(inv), ChannelMode::rgb);
  EXPECT_NEAR(got, want, 1e-12);
  EXPECT_LT(got, 0.5);
}

TEST(Ssim, SymmetricAndSizeChecked) {
  Rng rng(2);
  const Image a = random_tensor(14, 13, 3, rng), b = random_tensor(14, 13, 3, rng);
  EXPECT_EQ(ssim(a, b, ChannelMode::y), ssim(b, a, ChannelMode::y));
  EXPECT_THROW(ssim(Image(10, 12, 3), Image(10, 12, 3), ChannelMode::y), ParameterError);
}
