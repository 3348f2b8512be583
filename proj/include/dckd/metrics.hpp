#pragma once

#include <string>

#include "dckd/tensor.hpp"

namespace dckd {

/// Y: BT.601 luma (0.299, 0.587, 0.114) of full-range RGB. RGB: all channels.
enum class ChannelMode { y, rgb };

std::string to_string(ChannelMode mode);
ChannelMode parse_channel_mode(const std::string& text);

inline constexpr double kPsnrCapDb = 100.0;

struct MetricResult {
  double psnr_db = 0.0;  // +inf for identical images
  double ssim = 0.0;
  ChannelMode channel_mode = ChannelMode::y;

  double reported_psnr() const { return psnr_db > kPsnrCapDb ? kPsnrCapDb : psnr_db; }
};

/// Single-channel luma image.
Image to_luma(const Image& rgb);

/// 10 log10(1 / MSE) over the selected representation; inputs are clamped to [0,1].
double psnr(const Image& a, const Image& b, ChannelMode mode);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1. RGB mode averages the per-channel maps.
double ssim(const Image& a, const Image& b, ChannelMode mode);

MetricResult evaluate(const Image& restored, const Image& reference, ChannelMode mode);

}  // namespace dckd
