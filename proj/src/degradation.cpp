#include "dckd/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double draw(const Range& r, Rng& rng) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

std::string to_string(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::blur: return "blur";
    case DegradationKind::noise: return "noise";
    case DegradationKind::resize: return "resize";
  }
  return "?";
}

std::string to_string(DegradationPolicy policy) {
  switch (policy) {
    case DegradationPolicy::blur: return "blur";
    case DegradationPolicy::noise: return "noise";
    case DegradationPolicy::resize: return "resize";
    case DegradationPolicy::mix: return "mix";
  }
  return "?";
}

DegradationPolicy parse_degradation_policy(const std::string& text) {
  if (text == "blur") return DegradationPolicy::blur;
  if (text == "noise") return DegradationPolicy::noise;
  if (text == "resize") return DegradationPolicy::resize;
  if (text == "mix") return DegradationPolicy::mix;
  throw ParameterError("unknown degradation policy '" + text +
                       "' (expected blur | noise | resize | mix)");
}

void DegradationRanges::validate() const {
  auto ok = [](const Range& r) { return r.lo <= r.hi && std::isfinite(r.lo) && std::isfinite(r.hi); };
  if (!ok(blur_sigma) || blur_sigma.lo <= 0.0) {
    throw ParameterError("degradation: blur sigma range must satisfy 0 < lo <= hi");
  }
  if (!ok(noise_sigma) || noise_sigma.lo < 0.0) {
    throw ParameterError("degradation: noise sigma range must satisfy 0 <= lo <= hi");
  }
  if (!ok(resize_scale) || resize_scale.lo <= 0.0 || resize_scale.hi >= 1.0) {
    throw ParameterError("degradation: resize scale range must lie inside (0, 1)");
  }
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("blur sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

Image apply_blur(const Image& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int h = img.height();
  const int w = img.width();
  const int c = img.channels();

  Image tmp(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int t = -radius; t <= radius; ++t) {
        const auto src = img.pixel(y, reflect_index(x + t, w));
        auto dst = tmp.pixel(y, x);
        for (int ch = 0; ch < c; ++ch) dst[ch] += k[t + radius] * src[ch];
      }
    }
  }
  Image out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto dst = out.pixel(y, x);
      for (int t = -radius; t <= radius; ++t) {
        const auto src = tmp.pixel(reflect_index(y + t, h), x);
        for (int ch = 0; ch < c; ++ch) dst[ch] += k[t + radius] * src[ch];
      }
    }
  }
  return clamp01(std::move(out));
}

Image apply_noise(const Image& img, double sigma, Rng& rng) {
  if (sigma < 0.0) throw ParameterError("noise sigma must be >= 0");
  if (sigma == 0.0) return img;
  std::normal_distribution<double> gauss(0.0, sigma);
  Image out = img;
  for (double& v : out.values()) v = std::clamp(v + gauss(rng), 0.0, 1.0);
  return out;
}

Image resize_bilinear(const Image& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) {
    throw ParameterError("resize_bilinear: target dims must be >= 1");
  }
  const double sy = static_cast<double>(img.height()) / out_height;
  const double sx = static_cast<double>(img.width()) / out_width;
  Image out(out_height, out_width, img.channels());
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      auto dst = out.pixel(y, x);
      for (int c = 0; c < img.channels(); ++c) {
        const double top = (1.0 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bot = (1.0 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        dst[c] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Image apply_resize(const Image& img, double scale) {
  if (!(scale > 0.0 && scale < 1.0)) throw ParameterError("resize scale must lie in (0, 1)");
  const int h = static_cast<int>(std::floor(scale * img.height()));
  const int w = static_cast<int>(std::floor(scale * img.width()));
  if (h < 1 || w < 1) {
    throw ParameterError("resize scale " + std::to_string(scale) + " collapses a " +
                         img.shape_string() + " image below 1 pixel");
  }
  return clamp01(resize_bilinear(resize_bilinear(img, h, w), img.height(), img.width()));
}

Image apply_degradation(const DegradationSpec& spec, const Image& img) {
  switch (spec.kind) {
    case DegradationKind::blur: return apply_blur(img, spec.param);
    case DegradationKind::noise: {
      Rng rng(spec.seed);
      return apply_noise(img, spec.param, rng);
    }
    case DegradationKind::resize: return apply_resize(img, spec.param);
  }
  throw ParameterError("unknown degradation kind");
}

DegradationSpec sample_spec(DegradationPolicy policy, const DegradationRanges& ranges, Rng& rng) {
  DegradationKind kind;
  switch (policy) {
    case DegradationPolicy::blur: kind = DegradationKind::blur; break;
    case DegradationPolicy::noise: kind = DegradationKind::noise; break;
    case DegradationPolicy::resize: kind = DegradationKind::resize; break;
    case DegradationPolicy::mix:
    default:
      kind = static_cast<DegradationKind>(std::uniform_int_distribution<int>(0, 2)(rng));
      break;
  }
  DegradationSpec spec;
  spec.kind = kind;
  switch (kind) {
    case DegradationKind::blur: spec.param = draw(ranges.blur_sigma, rng); break;
    case DegradationKind::noise: spec.param = draw(ranges.noise_sigma, rng); break;
    case DegradationKind::resize: spec.param = draw(ranges.resize_scale, rng); break;
  }
  spec.seed = rng();
  return spec;
}

}  // namespace dckd
