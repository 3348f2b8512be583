#pragma once

#include <limits>
#include <span>
#include <vector>

#include "dckd/degradation.hpp"
#include "dckd/encoder.hpp"
#include "dckd/models.hpp"
#include "dckd/params.hpp"

namespace dckd {

struct EmaConfig {
  double alpha = 0.1;
  long initial_step = 1000;
  double step_growth = 2.0;
  long step_cap = std::numeric_limits<long>::max();

  void validate() const;
};

/// History-model parameters plus the growing refresh schedule.
///
/// A refresh fires at iteration t when t - last_update_iter is a multiple of
/// the current step s. It blends history <- alpha*history + (1-alpha)*student
/// and then grows s <- min(ceil(s*g), cap). With s_init = 1000, g = 2 the
/// refreshes land at 1000, 3000, 7000, ...
class EmaState {
 public:
  EmaState(ParamVector initial_history, EmaConfig config);

  /// Returns true when a refresh fired. `t` must increase strictly between calls.
  bool maybe_update(const ParamVector& student, long t);

  const ParamVector& history() const noexcept { return history_; }
  const EmaConfig& config() const noexcept { return config_; }
  long step() const noexcept { return step_; }
  long last_update_iter() const noexcept { return last_update_iter_; }
  long refresh_count() const noexcept { return refreshes_; }

 private:
  ParamVector history_;
  EmaConfig config_;
  long step_;
  long last_update_iter_ = 0;
  long last_t_ = 0;
  long refreshes_ = 0;
};

/// history <- alpha*history + (1-alpha)*student, elementwise.
void ema_blend(ParamVector& history, const ParamVector& student, double alpha);

/// Negative images are plain values: nothing links them back to the live student.
struct NegativeBatch {
  std::vector<Image> images;
  std::vector<DegradationSpec> specs;

  std::size_t size() const noexcept { return images.size(); }
};

NegativeBatch generate_negatives(const RestorationModel& history_model, const Image& lq, int count,
                                 DegradationPolicy policy, const DegradationRanges& ranges, Rng& rng);

struct ContrastiveTerms {
  double value = 0.0;
  std::vector<double> layer_terms;   // lambda_i-weighted per-level ratios
  std::vector<Tensor> anchor_grads;  // d value / d anchor level i (empty unless requested)
};

/// sum_i w_i * |a_i - p_i|_1 / (sum_j |a_i - n_ij|_1 + eps), with L1 as a plain
/// element sum over each flattened level. Weights come from `anchor.weights`.
ContrastiveTerms contrastive_from_features(const FeaturePyramid& anchor,
                                           const FeaturePyramid& positive,
                                           std::span<const FeaturePyramid> negatives, double eps,
                                           bool want_grad);

struct LossWithGrad {
  double value = 0.0;
  Image grad;  // w.r.t. the differentiable input only; empty unless requested
};

/// Encodes anchor, positive and negatives with the frozen encoder. Only the
/// anchor branch is differentiated.
LossWithGrad dynamic_contrastive_loss(const Image& anchor, const Image& positive,
                                      const NegativeBatch& negatives,
                                      const FeatureEncoder& encoder, double eps,
                                      bool want_grad = true);

}  // namespace dckd
