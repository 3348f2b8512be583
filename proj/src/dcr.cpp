#include "dckd/dcr.hpp"

#include <cmath>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

double sign(double v) { return (v > 0.0) - (v < 0.0); }

double l1_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s;
}

}  // namespace

void EmaConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("dcr.alpha must lie in [0, 1]");
  if (initial_step < 1) throw ParameterError("dcr.initial_step must be >= 1");
  if (!(step_growth >= 1.0) || !std::isfinite(step_growth)) {
    throw ParameterError("dcr.step_growth must be >= 1");
  }
  if (step_cap < initial_step) throw ParameterError("dcr.step_cap must be >= dcr.initial_step");
}

EmaState::EmaState(ParamVector initial_history, EmaConfig config)
    : history_(std::move(initial_history)), config_(config), step_(config.initial_step) {
  config_.validate();
}

void ema_blend(ParamVector& history, const ParamVector& student, double alpha) {
  require_compatible(history, student, "ema update");
  for (std::size_t i = 0; i < history.size(); ++i) {
    auto& h = history[i].values;
    const auto& s = student[i].values;
    for (std::size_t k = 0; k < h.size(); ++k) h[k] = alpha * h[k] + (1.0 - alpha) * s[k];
  }
}

bool EmaState::maybe_update(const ParamVector& student, long t) {
  if (t <= last_t_) {
    throw ParameterError("ema update: iteration " + std::to_string(t) +
                         " does not exceed the previous " + std::to_string(last_t_));
  }
  require_compatible(history_, student, "ema update");
  last_t_ = t;
  if ((t - last_update_iter_) % step_ != 0) return false;

  ema_blend(history_, student, config_.alpha);
  const double grown = std::ceil(static_cast<double>(step_) * config_.step_growth);
  step_ = grown >= static_cast<double>(config_.step_cap) ? config_.step_cap
                                                          : static_cast<long>(grown);
  last_update_iter_ = t;
  ++refreshes_;
  return true;
}

NegativeBatch generate_negatives(const RestorationModel& history_model, const Image& lq, int count,
                                 DegradationPolicy policy, const DegradationRanges& ranges,
                                 Rng& rng) {
  if (count < 1) throw ParameterError("number of negatives must be >= 1");
  NegativeBatch batch;
  batch.images.reserve(count);
  batch.specs.reserve(count);
  for (int n = 0; n < count; ++n) {
    batch.specs.push_back(sample_spec(policy, ranges, rng));
    batch.images.push_back(history_model.forward(apply_degradation(batch.specs.back(), lq)));
  }
  return batch;
}

ContrastiveTerms contrastive_from_features(const FeaturePyramid& anchor,
                                           const FeaturePyramid& positive,
                                           std::span<const FeaturePyramid> negatives, double eps,
                                           bool want_grad) {
  if (negatives.empty()) throw ParameterError("contrastive loss needs at least one negative");
  const std::size_t levels = anchor.size();
  if (anchor.weights.size() != levels || positive.size() != levels) {
    throw StructuralError("contrastive loss: pyramid level counts differ");
  }
  for (const auto& neg : negatives) {
    if (neg.size() != levels) throw StructuralError("contrastive loss: pyramid level counts differ");
  }

  ContrastiveTerms out;
  out.layer_terms.resize(levels, 0.0);
  if (want_grad) out.anchor_grads.resize(levels);
  for (std::size_t i = 0; i < levels; ++i) {
    const Tensor& a = anchor.levels[i];
    const Tensor& p = positive.levels[i];
    require_same_shape(a, p, "contrastive loss (positive)");
    const double num = l1_distance(a, p);
    double den = eps;
    for (const auto& neg : negatives) {
      require_same_shape(a, neg.levels[i], "contrastive loss (negative)");
      den += l1_distance(a, neg.levels[i]);
    }
    const double w = anchor.weights[i];
    out.layer_terms[i] = w * num / den;
    out.value += out.layer_terms[i];

    if (!want_grad) continue;
    Tensor g(a.height(), a.width(), a.channels());
    const double scale_num = w / den;
    const double scale_den = w * num / (den * den);
    for (std::size_t k = 0; k < a.size(); ++k) {
      double neg_sign = 0.0;
      for (const auto& neg : negatives) neg_sign += sign(a[k] - neg.levels[i][k]);
      g[k] = scale_num * sign(a[k] - p[k]) - scale_den * neg_sign;
    }
    out.anchor_grads[i] = std::move(g);
  }
  return out;
}

LossWithGrad dynamic_contrastive_loss(const Image& anchor, const Image& positive,
                                      const NegativeBatch& negatives,
                                      const FeatureEncoder& encoder, double eps, bool want_grad) {
  require_same_shape(anchor, positive, "dynamic_contrastive_loss");
  for (const auto& n : negatives.images) require_same_shape(anchor, n, "dynamic_contrastive_loss");

  FeatureEncoder::Trace trace;
  const FeaturePyramid fa = encoder.encode(anchor, trace);
  const FeaturePyramid fp = encoder.encode(positive);
  std::vector<FeaturePyramid> fn;
  fn.reserve(negatives.size());
  for (const auto& n : negatives.images) fn.push_back(encoder.encode(n));

  ContrastiveTerms terms = contrastive_from_features(fa, fp, fn, eps, want_grad);
  LossWithGrad out{terms.value, {}};
  if (want_grad) out.grad = encoder.backward(trace, terms.anchor_grads);
  return out;
}

}  // namespace dckd
