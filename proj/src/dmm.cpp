#include "dckd/dmm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

void check_dims(const Tensor& features, const Codebook& codebook) {
  if (features.channels() != codebook.dim()) {
    throw StructuralError("feature channels " + std::to_string(features.channels()) +
                          " do not match codebook dimension " + std::to_string(codebook.dim()));
  }
}

double sign_factor(DistanceSign sign) { return sign == DistanceSign::negated ? -1.0 : 1.0; }

}  // namespace

std::string to_string(DistanceSign sign) {
  return sign == DistanceSign::negated ? "negated" : "literal";
}

DistanceSign parse_distance_sign(const std::string& text) {
  if (text == "negated") return DistanceSign::negated;
  if (text == "literal") return DistanceSign::literal;
  throw ParameterError("unknown distance sign '" + text + "' (expected negated | literal)");
}

void DmmConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("dmm.temperature must be > 0");
  }
  if (!(log_floor > 0.0)) throw ParameterError("dmm log floor must be > 0");
}

Tensor category_distribution(const Tensor& features, const Codebook& codebook, DistanceSign sign,
                             double temperature) {
  check_dims(features, codebook);
  if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0");
  const int m_count = codebook.size();
  const double scale = sign_factor(sign) / temperature;
  Tensor probs(features.height(), features.width(), m_count);
  std::vector<double> logits(m_count);
  for (int y = 0; y < features.height(); ++y) {
    for (int x = 0; x < features.width(); ++x) {
      const auto f = features.pixel(y, x);
      for (int m = 0; m < m_count; ++m) {
        const auto e = codebook.entry(m);
        double d = 0.0;
        for (int j = 0; j < codebook.dim(); ++j) d += (f[j] - e[j]) * (f[j] - e[j]);
        logits[m] = scale * d;
      }
      const double top = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      auto p = probs.pixel(y, x);
      for (int m = 0; m < m_count; ++m) {
        p[m] = std::exp(logits[m] - top);
        z += p[m];
      }
      for (int m = 0; m < m_count; ++m) p[m] /= z;
    }
  }
  return probs;
}

Tensor category_distribution_backward(const Tensor& features, const Codebook& codebook,
                                      const Tensor& probs, const Tensor& grad_probs,
                                      DistanceSign sign, double temperature) {
  check_dims(features, codebook);
  require_same_shape(probs, grad_probs, "category_distribution_backward");
  const double scale = sign_factor(sign) / temperature;
  Tensor grad(features.height(), features.width(), features.channels());
  for (int y = 0; y < features.height(); ++y) {
    for (int x = 0; x < features.width(); ++x) {
      const auto p = probs.pixel(y, x);
      const auto gp = grad_probs.pixel(y, x);
      double dot = 0.0;
      for (int m = 0; m < codebook.size(); ++m) dot += p[m] * gp[m];
      const auto f = features.pixel(y, x);
      auto g = grad.pixel(y, x);
      for (int m = 0; m < codebook.size(); ++m) {
        // d logit_m / d f = scale * 2 (f - e_m)
        const double dlogit = p[m] * (gp[m] - dot) * scale * 2.0;
        if (dlogit == 0.0) continue;
        const auto e = codebook.entry(m);
        for (int j = 0; j < codebook.dim(); ++j) g[j] += dlogit * (f[j] - e[j]);
      }
    }
  }
  return grad;
}

double pixelwise_cross_entropy(const Tensor& teacher, const Tensor& student, double log_floor) {
  require_same_shape(teacher, student, "pixelwise_cross_entropy");
  if (teacher.pixels() == 0) throw ShapeError("pixelwise_cross_entropy: empty category map");
  double total = 0.0;
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    total -= teacher[k] * std::log(std::max(student[k], log_floor));
  }
  return total / teacher.pixels();
}

Tensor pixelwise_cross_entropy_grad(const Tensor& teacher, const Tensor& student,
                                    double log_floor) {
  require_same_shape(teacher, student, "pixelwise_cross_entropy_grad");
  Tensor g(student.height(), student.width(), student.channels());
  const double inv_pixels = 1.0 / teacher.pixels();
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = student[k] > log_floor ? -teacher[k] / student[k] * inv_pixels : 0.0;
  }
  return g;
}

double mean_entropy(const Tensor& probs, double log_floor) {
  return pixelwise_cross_entropy(probs, probs, log_floor);
}

LossWithGrad dmm_from_features(const Tensor& teacher_features, const Tensor& student_features,
                               const Codebook& codebook, const DmmConfig& config, bool want_grad) {
  require_same_shape(teacher_features, student_features, "dmm");
  const Tensor ct =
      category_distribution(teacher_features, codebook, config.sign, config.temperature);
  const Tensor cs =
      category_distribution(student_features, codebook, config.sign, config.temperature);
  LossWithGrad out{pixelwise_cross_entropy(ct, cs, config.log_floor), {}};
  if (want_grad) {
    const Tensor gp = pixelwise_cross_entropy_grad(ct, cs, config.log_floor);
    out.grad = category_distribution_backward(student_features, codebook, cs, gp, config.sign,
                                              config.temperature);
  }
  return out;
}

LossWithGrad dmm_loss(const Image& teacher_out, const Image& student_out,
                      const FeatureEncoder& encoder, const Codebook& codebook,
                      const DmmConfig& config, bool want_grad) {
  require_same_shape(teacher_out, student_out, "dmm_loss");
  FeatureEncoder::Trace trace;
  const FeaturePyramid fs = encoder.encode(student_out, trace);
  const Tensor ft = encoder.deepest_features(teacher_out);
  LossWithGrad feat = dmm_from_features(ft, fs.levels.back(), codebook, config, want_grad);
  LossWithGrad out{feat.value, {}};
  if (want_grad) {
    std::vector<Tensor> level_grads(encoder.levels());
    level_grads.back() = std::move(feat.grad);
    out.grad = encoder.backward(trace, level_grads);
  }
  return out;
}

}  // namespace dckd
