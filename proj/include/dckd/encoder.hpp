#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dckd/nn.hpp"
#include "dckd/params.hpp"
#include "dckd/tensor.hpp"

namespace dckd {

struct FeaturePyramid {
  std::vector<Tensor> levels;
  std::vector<double> weights;  // one non-negative weight per level

  std::size_t size() const noexcept { return levels.size(); }
};

/// Default per-level weights for the five-level pyramid, shallow to deep.
std::vector<double> default_level_weights();

struct EncoderConfig {
  int in_channels = 3;
  /// Output width of each stage. Stage 0 keeps full resolution; every later stage halves it.
  std::vector<int> channels{8, 16, 32, 32, 32};
  std::vector<double> level_weights = default_level_weights();
  std::uint64_t seed = 0;

  void validate() const;
};

/// Frozen strided-conv feature extractor. Each stage is conv3x3 followed by
/// SiLU; every stage output is one pyramid level. Differentiable w.r.t. its
/// input, never w.r.t. its weights.
class FeatureEncoder {
 public:
  struct Trace {
    std::vector<nn::ConvCache> convs;
    std::vector<Tensor> pre_activation;
  };

  explicit FeatureEncoder(EncoderConfig config = {});
  /// Wraps externally supplied weights; validated against `config`.
  FeatureEncoder(EncoderConfig config, ParamVector weights);

  const EncoderConfig& config() const noexcept { return config_; }
  int levels() const noexcept { return static_cast<int>(config_.channels.size()); }
  int embedding_dim() const noexcept { return config_.channels.back(); }
  /// Spatial dims of the input must be multiples of this.
  int required_multiple() const noexcept { return 1 << (levels() - 1); }

  FeaturePyramid encode(const Image& img) const;
  FeaturePyramid encode(const Image& img, Trace& trace) const;
  Tensor deepest_features(const Image& img) const;

  /// Gradient w.r.t. the input image given per-level gradients. Empty tensors
  /// in `level_grads` stand for zero gradient at that level.
  Image backward(const Trace& trace, std::span<const Tensor> level_grads) const;

  const ParamVector& params() const noexcept { return params_; }
  std::uint64_t checksum() const { return params_.checksum(); }

 private:
  nn::ConvView stage_view(int stage) const;
  void check_input(const Image& img) const;

  EncoderConfig config_;
  ParamVector params_;
};

/// Weight file: array container with meta {"kind": "encoder", "in_channels",
/// "channels", "level_weights"} and arrays stage<i>.weight [3,3,cin,cout], stage<i>.bias [cout].
void save_encoder(const std::filesystem::path& path, const FeatureEncoder& encoder);
FeatureEncoder load_external_encoder(const std::filesystem::path& path);

/// M x d table of distinct, finite code vectors.
class Codebook {
 public:
  Codebook(int size, int dim, std::vector<double> entries);

  int size() const noexcept { return size_; }
  int dim() const noexcept { return dim_; }
  std::span<const double> entry(int m) const {
    return {entries_.data() + static_cast<std::size_t>(m) * dim_, static_cast<std::size_t>(dim_)};
  }
  const std::vector<double>& entries() const noexcept { return entries_; }
  std::uint64_t checksum() const;

 private:
  int size_;
  int dim_;
  std::vector<double> entries_;
};

/// Codebook file: array container with meta {"kind": "codebook", "M", "d"} and a
/// single array "codebook" of shape [M, d].
void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

/// k-means (k-means++ seeding, Lloyd iterations) over the deepest-level pixel
/// features of `images`.
Codebook build_codebook(const FeatureEncoder& encoder, std::span<const Image> images, int size,
                        std::uint64_t seed, int iterations = 30);

}  // namespace dckd
