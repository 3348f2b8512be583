#pragma once

#include <string>

#include "dckd/dcr.hpp"
#include "dckd/encoder.hpp"

namespace dckd {

/// `negated` scores codes by -|F - e|^2 (nearest code most likely);
/// `literal` applies softmax to +|F - e|^2.
enum class DistanceSign { negated, literal };

std::string to_string(DistanceSign sign);
DistanceSign parse_distance_sign(const std::string& text);

struct DmmConfig {
  double temperature = 1.0;
  DistanceSign sign = DistanceSign::negated;
  double log_floor = 1e-12;

  void validate() const;
};

/// Per-pixel softmax over squared codebook distances: an (H, W, M) category map.
Tensor category_distribution(const Tensor& features, const Codebook& codebook, DistanceSign sign,
                             double temperature);

/// Pulls d loss / d probs back to d loss / d features.
Tensor category_distribution_backward(const Tensor& features, const Codebook& codebook,
                                      const Tensor& probs, const Tensor& grad_probs,
                                      DistanceSign sign, double temperature);

/// Mean over pixels of -sum_i t_i log(max(s_i, floor)). `teacher` is a constant.
double pixelwise_cross_entropy(const Tensor& teacher, const Tensor& student,
                               double log_floor = 1e-12);
Tensor pixelwise_cross_entropy_grad(const Tensor& teacher, const Tensor& student,
                                    double log_floor = 1e-12);

/// Mean per-pixel entropy, using the same log floor as the cross-entropy.
double mean_entropy(const Tensor& probs, double log_floor = 1e-12);

/// Cross-entropy between the category maps of two deepest-level feature maps;
/// gradient (if requested) is w.r.t. the student features.
LossWithGrad dmm_from_features(const Tensor& teacher_features, const Tensor& student_features,
                               const Codebook& codebook, const DmmConfig& config, bool want_grad);

/// Encodes both outputs, maps them to category distributions and aligns them.
/// The teacher branch is detached.
LossWithGrad dmm_loss(const Image& teacher_out, const Image& student_out,
                      const FeatureEncoder& encoder, const Codebook& codebook,
                      const DmmConfig& config, bool want_grad = true);

}  // namespace dckd
