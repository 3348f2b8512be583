#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dckd/tensor.hpp"

namespace dckd {

/// Procedural RGB images on a 1/255 grid: smooth backgrounds overlaid with
/// blobs, hard-edged shapes, stripes and checkerboards. Quantized so the PPM
/// export is lossless.
std::vector<Image> make_toy_corpus(std::uint64_t seed, int count, int size);

struct PairedSample {
  Image lq;
  Image gt;
  int scale = 1;
  std::string degradation;  // how lq was produced from gt
};

/// lq = bilinear downsample of gt by `scale`.
PairedSample synth_pair(const Image& gt, int scale);

struct Augmentation {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  bool transpose = false;  // combined with the flips this covers all 8 rotations/reflections
};

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image transpose(const Image& img);
Image apply_augmentation(const Image& img, const Augmentation& aug);

/// Aligned crop: lq patch at (y, x), gt patch at (scale*y, scale*x).
PairedSample crop_pair(const PairedSample& sample, int patch, int y, int x);

/// Random aligned crop of `patch` lq pixels plus one random flip/transpose draw.
PairedSample crop_augment(const PairedSample& sample, int patch, Rng& rng);

/// Binary PPM (P6, maxval 255). Values are clamped and rounded on write.
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

/// Writes img_XXXX.ppm plus manifest.json describing the generator inputs.
void save_corpus(const std::filesystem::path& dir, const std::vector<Image>& images,
                 std::uint64_t seed, int size);

}  // namespace dckd
