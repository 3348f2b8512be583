#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dckd/tensor.hpp"

namespace dckd {

enum class DegradationKind { blur, noise, resize };
enum class DegradationPolicy { blur, noise, resize, mix };

std::string to_string(DegradationKind kind);
std::string to_string(DegradationPolicy policy);
DegradationPolicy parse_degradation_policy(const std::string& text);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Sampling ranges for the negative-sample degradations. Noise sigma is in
/// normalized intensity, blur sigma in pixels, resize a scale fraction.
struct DegradationRanges {
  Range blur_sigma{0.5, 2.0};
  Range noise_sigma{5.0 / 255.0, 30.0 / 255.0};
  Range resize_scale{0.5, 0.9};

  void validate() const;
};

struct DegradationSpec {
  DegradationKind kind = DegradationKind::noise;
  double param = 0.0;
  std::uint64_t seed = 0;
};

/// Normalized 1-D Gaussian taps for radius ceil(3*sigma).
std::vector<double> gaussian_kernel(double sigma);

Image apply_blur(const Image& img, double sigma);
Image apply_noise(const Image& img, double sigma, Rng& rng);
Image apply_resize(const Image& img, double scale);

/// Half-pixel-centred bilinear interpolation with edge clamping. No clamping of values.
Image resize_bilinear(const Image& img, int out_height, int out_width);

/// Deterministic in (spec, img): the noise stream is seeded from spec.seed.
Image apply_degradation(const DegradationSpec& spec, const Image& img);

/// "mix" picks one of the three kinds uniformly, then draws its parameter.
DegradationSpec sample_spec(DegradationPolicy policy, const DegradationRanges& ranges, Rng& rng);

}  // namespace dckd
