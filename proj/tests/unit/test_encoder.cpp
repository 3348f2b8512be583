#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dckd/array_file.hpp"
#include "dckd/encoder.hpp"
#include "dckd/errors.hpp"
#include "test_util.hpp"

using namespace dckd;
using namespace dckd::test;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("dckd_test_" + name); }

EncoderConfig small_config() {
  EncoderConfig c;
  c.channels = {4, 8, 8, 8};
  c.level_weights = {0.125, 0.25, 0.5, 1.0};
  return c;
}

}  // namespace

TEST(Encoder, DefaultLevelWeights) {
  const auto w = default_level_weights();
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w[0], 1.0 / 32);
  EXPECT_EQ(w[1], 1.0 / 16);
  EXPECT_EQ(w[2], 1.0 / 8);
  EXPECT_EQ(w[3], 1.0 / 4);
  EXPECT_EQ(w[4], 1.0);
  FeatureEncoder enc;
  EXPECT_EQ(enc.levels(), 5);
  EXPECT_EQ(enc.embedding_dim(), 32);
}

TEST(Encoder, LevelShapesFor32x32) {
  FeatureEncoder enc;
  Rng rng(1);
  const FeaturePyramid p = enc.encode(random_tensor(32, 32, 3, rng));
  ASSERT_EQ(p.size(), 5u);
  const int sides[] = {32, 16, 8, 4, 2};
  const int chans[] = {8, 16, 32, 32, 32};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(p.levels[i].height(), sides[i]);
    EXPECT_EQ(p.levels[i].width(), sides[i]);
    EXPECT_EQ(p.levels[i].channels(), chans[i]);
    EXPECT_TRUE(all_finite(p.levels[i]));
  }
  EXPECT_EQ(p.weights, default_level_weights());
}

TEST(Encoder, DeterministicAndConsistentDeepest) {
  FeatureEncoder a, b;
  Rng rng(2);
  const Image x = random_tensor(32, 16, 3, rng);
  const FeaturePyramid p1 = a.encode(x), p2 = b.encode(x);
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1.levels[i], p2.levels[i]);
  EXPECT_EQ(a.deepest_features(x), p1.levels.back());
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Encoder, IndivisibleInputNamesRequiredMultiple) {
  FeatureEncoder enc;
  try {
    enc.encode(Image(24, 32, 3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16"), std::string::npos) << e.what();
  }
}

TEST(Encoder, InputGradientMatchesFiniteDifferences) {
  FeatureEncoder enc(small_config());
  Rng rng(3);
  const Image x = random_tensor(8, 8, 3, rng);
  FeatureEncoder::Trace trace;
  const FeaturePyramid p = enc.encode(x, trace);
  std::vector<Tensor> probes;
  for (const auto& l : p.levels) probes.push_back(random_tensor(l.height(), l.width(), l.channels(), rng, -1, 1));
  auto loss = [&](const Image& img) {
    const FeaturePyramid q = enc.encode(img);
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t k = 0; k < q.levels[i].size(); ++k) s += q.levels[i][k] * probes[i][k];
    return s;
  };
  const Image g = enc.backward(trace, probes);
  const auto fd = numeric_gradient(values_of(x), [&](const auto& v) { return loss(with_values(x, v)); });
  EXPECT_LT(relative_error(g.values(), fd), 1e-4);

  // An empty tensor stands for zero gradient at that level.
  std::vector<Tensor> only_last(p.size());
  only_last.back() = probes.back();
  const Image g_last = enc.backward(trace, only_last);
  auto loss_last = [&](const Image& img) {
    const Tensor d = enc.deepest_features(img);
    double s = 0;
    for (std::size_t k = 0; k < d.size(); ++k) s += d[k] * probes.back()[k];
    return s;
  };
  const auto fd_last = numeric_gradient(values_of(x), [&](const auto& v) { return loss_last(with_values(x, v)); });
  EXPECT_LT(relative_error(g_last.values(), fd_last), 1e-4);
}

TEST(Encoder, SaveLoadRoundTripIsBitExact) {
  FeatureEncoder enc;
  const auto path = tmp("enc.bin");
  save_encoder(path, enc);
  const FeatureEncoder back = load_external_encoder(path);
  EXPECT_EQ(back.params(), enc.params());
  EXPECT_EQ(back.config().channels, enc.config().channels);
  EXPECT_EQ(back.config().level_weights, enc.config().level_weights);
  const auto path2 = tmp("enc2.bin");
  save_encoder(path2, back);
  EXPECT_EQ(read_array_file(path).arrays, read_array_file(path2).arrays);
  fs::remove(path);
  fs::remove(path2);
}

TEST(Encoder, LoadRejectsWrongArrayShape) {
  FeatureEncoder enc;
  ArrayFile f;
  const auto path = tmp("enc_bad.bin");
  save_encoder(path, enc);
  f = read_array_file(path);
  f.arrays[2].shape = {3, 3, 8, 17};
  f.arrays[2].values.resize(3 * 3 * 8 * 17, 0.0);
  write_array_file(path, f);
  try {
    load_external_encoder(path);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find(f.arrays[2].name), std::string::npos) << e.what();
  }
  fs::remove(path);
}

TEST(Codebook, ValidatesEntries) {
  EXPECT_NO_THROW(Codebook(2, 2, {0, 0, 1, 0}));
  EXPECT_THROW(Codebook(2, 2, {1, 0, 1, 0}), StructuralError);
  EXPECT_THROW(Codebook(2, 2, {0, 0, std::nan(""), 0}), StructuralError);
  EXPECT_THROW(Codebook(2, 2, {0, 0, 1}), StructuralError);
}

TEST(Codebook, FileRoundTripWithSixteenRows) {
  Rng rng(4);
  std::vector<double> e = values_of(random_tensor(16, 32, 1, rng, -1, 1));
  const Codebook cb(16, 32, e);
  const auto path = tmp("cb.bin");
  save_codebook(path, cb);
  const Codebook back = load_codebook(path);
  EXPECT_EQ(back.size(), 16);
  EXPECT_EQ(back.dim(), FeatureEncoder().embedding_dim());
  EXPECT_EQ(back.entries(), e);
  EXPECT_EQ(back.checksum(), cb.checksum());
  fs::remove(path);
}

TEST(Codebook, LoadRejectsHeaderMismatch) {
  const Codebook cb(2, 2, {0, 0, 1, 0});
  const auto path = tmp("cb_bad.bin");
  save_codebook(path, cb);
  ArrayFile f = read_array_file(path);
  f.meta["M"] = 3;
  write_array_file(path, f);
  EXPECT_THROW(load_codebook(path), LoadError);
  f.meta["M"] = 2;
  f.arrays[0].values[2] = 0.0;  // duplicate row
  write_array_file(path, f);
  try {
    load_codebook(path);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("codebook"), std::string::npos);
  }
  fs::remove(path);
}

TEST(Codebook, KMeansGivesDistinctFiniteRows) {
  FeatureEncoder enc;
  Rng rng(5);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_tensor(32, 32, 3, rng));
  const Codebook cb = build_codebook(enc, imgs, 8, 0);
  EXPECT_EQ(cb.size(), 8);
  EXPECT_EQ(cb.dim(), 32);
  const Codebook again = build_codebook(enc, imgs, 8, 0);
  EXPECT_EQ(cb.entries(), again.entries());
}

TEST(ArrayFile, RejectsBadMagicAndTruncation) {
  const auto path = tmp("arr.bin");
  { std::ofstream(path, std::ios::binary) << "NOTMAGIC........"; }
  EXPECT_THROW(read_array_file(path), LoadError);
  ArrayFile f;
  f.arrays.entries().push_back({"a", {4}, {1, 2, 3, 4}});
  write_array_file(path, f);
  fs::resize_file(path, fs::file_size(path) - 8);
  try {
    read_array_file(path);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos) << e.what();
  }
  fs::remove(path);
}
