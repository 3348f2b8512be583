#include "dckd/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Image prepare(const Image& img, ChannelMode mode) {
  Image c = clamp01(img);
  return mode == ChannelMode::y ? to_luma(c) : c;
}

std::vector<double> window_weights() {
  std::vector<double> w(kWindow * kWindow);
  double sum = 0.0;
  const int r = kWindow / 2;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * kSigma * kSigma));
      w[(y + r) * kWindow + (x + r)] = v;
      sum += v;
    }
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

std::string to_string(ChannelMode mode) { return mode == ChannelMode::y ? "Y" : "RGB"; }

ChannelMode parse_channel_mode(const std::string& text) {
  if (text == "Y" || text == "y") return ChannelMode::y;
  if (text == "RGB" || text == "rgb") return ChannelMode::rgb;
  throw ParameterError("unknown channel mode '" + text + "' (expected Y | RGB)");
}

Image to_luma(const Image& rgb) {
  if (rgb.channels() != 3) throw ShapeError("to_luma needs a 3-channel image");
  Image y(rgb.height(), rgb.width(), 1);
  for (int r = 0; r < rgb.height(); ++r) {
    for (int c = 0; c < rgb.width(); ++c) {
      const auto p = rgb.pixel(r, c);
      y.at(r, c, 0) = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return y;
}

double psnr(const Image& a, const Image& b, ChannelMode mode) {
  require_same_shape(a, b, "psnr");
  const Image x = prepare(a, mode);
  const Image y = prepare(b, mode);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b, ChannelMode mode) {
  require_same_shape(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) {
    throw ParameterError("ssim needs images of at least 11x11, got " + a.shape_string());
  }
  const Image x = prepare(a, mode);
  const Image y = prepare(b, mode);
  static const std::vector<double> w = window_weights();
  const int out_h = x.height() - kWindow + 1;
  const int out_w = x.width() - kWindow + 1;

  double total = 0.0;
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int ky = 0; ky < kWindow; ++ky) {
          for (int kx = 0; kx < kWindow; ++kx) {
            const double wk = w[ky * kWindow + kx];
            const double vx = x.at(oy + ky, ox + kx, c);
            const double vy = y.at(oy + ky, ox + kx, c);
            mx += wk * vx;
            my += wk * vy;
            xx += wk * (vx * vx);
            yy += wk * (vy * vy);
            xy += wk * (vx * vy);
          }
        }
        const double vx = xx - mx * mx;
        const double vy = yy - my * my;
        const double cxy = xy - mx * my;
        total += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      }
    }
  }
  return total / (static_cast<double>(out_h) * out_w * x.channels());
}

MetricResult evaluate(const Image& restored, const Image& reference, ChannelMode mode) {
  return {psnr(restored, reference, mode), ssim(restored, reference, mode), mode};
}

}  // namespace dckd
