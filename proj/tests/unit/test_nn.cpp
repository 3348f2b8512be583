#include <gtest/gtest.h>

#include "dckd/errors.hpp"
#include "dckd/nn.hpp"
#include "test_util.hpp"

using namespace dckd;
using namespace dckd::test;

namespace {

// Direct 3x3 convolution with zero padding.
Tensor naive_conv(const Tensor& in, const std::vector<double>& w, const std::vector<double>& b,
                  int cout, int stride) {
  const int cin = in.channels();
  const int oh = (in.height() - 1) / stride + 1;
  const int ow = (in.width() - 1) / stride + 1;
  Tensor out(oh, ow, cout);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int o = 0; o < cout; ++o) {
        double s = b[o];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = y * stride + ky - 1, ix = x * stride + kx - 1;
            if (iy < 0 || ix < 0 || iy >= in.height() || ix >= in.width()) continue;
            for (int c = 0; c < cin; ++c) s += in.at(iy, ix, c) * w[((ky * 3 + kx) * cin + c) * cout + o];
          }
        out.at(y, x, o) = s;
      }
  return out;
}

}  // namespace

class ConvStride : public ::testing::TestWithParam<int> {};

TEST_P(ConvStride, MatchesNestedLoops) {
  Rng rng(3);
  const int stride = GetParam();
  const Tensor in = random_tensor(7, 6, 3, rng, -1, 1);
  const auto w = values_of(random_tensor(27, 4, 1, rng, -1, 1));
  const auto b = values_of(random_tensor(4, 1, 1, rng, -1, 1));
  const Tensor got = nn::conv3x3(in, {w, b, 3, 4, stride});
  const Tensor want = naive_conv(in, w, b, 4, stride);
  ASSERT_TRUE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST_P(ConvStride, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  const int stride = GetParam();
  const Tensor in = random_tensor(6, 6, 2, rng, -1, 1);
  std::vector<double> w = values_of(random_tensor(18, 3, 1, rng, -1, 1));
  std::vector<double> b = values_of(random_tensor(3, 1, 1, rng, -1, 1));
  nn::ConvCache cache;
  const Tensor out = nn::conv3x3(in, {w, b, 2, 3, stride}, &cache);
  const Tensor probe = random_tensor(out.height(), out.width(), out.channels(), rng, -1, 1);
  auto loss_of = [&](const Tensor& x, const std::vector<double>& ww) {
    const Tensor o = nn::conv3x3(x, {ww, b, 2, 3, stride});
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * probe[i];
    return s;
  };
  std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
  const Tensor gin = nn::conv3x3_backward(cache, probe, {w, b, 2, 3, stride}, gw, gb, true);
  const auto fd_in = numeric_gradient(values_of(in), [&](const auto& v) { return loss_of(with_values(in, v), w); });
  const auto fd_w = numeric_gradient(w, [&](const auto& v) { return loss_of(in, v); });
  EXPECT_LT(relative_error(gin.values(), fd_in), 1e-8);
  EXPECT_LT(relative_error(gw, fd_w), 1e-8);
  // bias gradient is the sum of the probe per channel
  for (int o = 0; o < 3; ++o) {
    double s = 0;
    for (int p = 0; p < probe.pixels(); ++p) s += probe[p * 3 + o];
    EXPECT_NEAR(gb[o], s, 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Strides, ConvStride, ::testing::Values(1, 2));

TEST(Conv, RejectsChannelMismatch) {
  Tensor in(4, 4, 2);
  std::vector<double> w(27 * 1), b(1);
  EXPECT_THROW(nn::conv3x3(in, {w, b, 3, 1, 1}), ShapeError);
}

TEST(PixelShuffle, ChannelOrderAndInverse) {
  Tensor in(1, 1, 4);
  for (int c = 0; c < 4; ++c) in.at(0, 0, c) = c;
  const Tensor out = nn::pixel_shuffle(in, 2);
  ASSERT_EQ(out.height(), 2);
  ASSERT_EQ(out.channels(), 1);
  EXPECT_EQ(out.at(0, 0, 0), 0);
  EXPECT_EQ(out.at(0, 1, 0), 1);
  EXPECT_EQ(out.at(1, 0, 0), 2);
  EXPECT_EQ(out.at(1, 1, 0), 3);
  Rng rng(1);
  const Tensor x = random_tensor(3, 5, 12, rng);
  EXPECT_EQ(nn::pixel_unshuffle(nn::pixel_shuffle(x, 2), 2), x);
}

TEST(Activations, SiluBackwardMatchesFiniteDifferences) {
  Rng rng(2);
  const Tensor pre = random_tensor(3, 3, 2, rng, -3, 3);
  const Tensor probe = random_tensor(3, 3, 2, rng, -1, 1);
  const Tensor g = nn::silu_backward(probe, pre);
  const auto fd = numeric_gradient(values_of(pre), [&](const auto& v) {
    const Tensor o = nn::silu(with_values(pre, v));
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * probe[i];
    return s;
  });
  EXPECT_LT(relative_error(g.values(), fd), 1e-8);
}

TEST(Activations, ReluBackwardMasksInactiveUnits) {
  Tensor act(1, 1, 3);
  act[0] = 0.0;
  act[1] = 2.0;
  act[2] = 0.0;
  Tensor g(1, 1, 3, 1.0);
  nn::relu_backward_inplace(g, act);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_EQ(g[2], 0.0);
}
