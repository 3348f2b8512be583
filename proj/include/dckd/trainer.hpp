#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dckd/data.hpp"
#include "dckd/dcr.hpp"
#include "dckd/degradation.hpp"
#include "dckd/dmm.hpp"
#include "dckd/encoder.hpp"
#include "dckd/models.hpp"

namespace dckd {

/// Coefficients of the overall objective. The reconstruction term always has
/// unit weight; `kd` defaults to 1 and exists so the scratch baseline can drop it.
struct LossWeights {
  double kd = 1.0;
  double dcl = 0.1;
  double ce = 0.001;

  void validate() const;
};

struct LossReport {
  double rec = 0.0;
  double kd = 0.0;
  double dcl = 0.0;
  double ce = 0.0;
  double total = 0.0;

  bool finite() const;
};

/// rec + kd*w.kd + dcl*w.dcl + ce*w.ce
double recompose_total(const LossReport& r, const LossWeights& w);

/// Mean absolute difference. Used for both the reconstruction and the logits-KD term.
double reconstruction_loss(const Image& student_out, const Image& gt);
double kd_loss(const Image& student_out, const Image& teacher_out);
/// d mean|a - b| / d a (sign / n), scaled by `scale`, accumulated into `grad`.
void accumulate_l1_grad(const Image& a, const Image& b, double scale, Image& grad);

struct DistillSettings {
  LossWeights weights;
  int num_negatives = 5;
  DegradationPolicy policy = DegradationPolicy::noise;
  DegradationRanges ranges;
  double dcl_eps = 1e-8;
  DmmConfig dmm;

  bool needs_teacher() const { return weights.kd > 0 || weights.dcl > 0 || weights.ce > 0; }
  bool needs_encoder() const { return weights.dcl > 0 || weights.ce > 0; }
  void validate() const;
};

struct TrainingBatch {
  std::vector<Image> lq;
  std::vector<Image> gt;

  std::size_t size() const noexcept { return lq.size(); }
};

/// Frozen collaborators of the student. Pointers may be null when the active
/// loss weights do not need them.
struct DistillContext {
  const RestorationModel* teacher = nullptr;
  const RestorationModel* history = nullptr;
  const FeatureEncoder* encoder = nullptr;
  const Codebook* codebook = nullptr;
};

struct LossEvaluation {
  LossReport report;
  ParamVector student_grads;  // empty unless requested
};

/// One forward (and optionally backward) pass of the overall objective over a
/// batch. Components whose weight is zero are not evaluated and report 0.
/// Teacher output, positives and negatives are constants: only the student
/// receives gradients.
LossEvaluation total_loss(const TrainingBatch& batch, const RestorationModel& student,
                          const DistillContext& context, const DistillSettings& settings, Rng& rng,
                          bool want_grad = true);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamVector& like, AdamConfig config = {});
  /// No-op on a frozen model.
  void step(RestorationModel& model, const ParamVector& grads, double lr);
  long steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  ParamVector m_;
  ParamVector v_;
  long t_ = 0;
};

/// Piecewise-constant decay: lr * decay^(number of milestones passed), with
/// milestones given as fractions of the total iteration count.
struct LrSchedule {
  double initial = 1e-3;
  double decay = 0.5;
  std::vector<double> milestones{0.6, 0.8};

  double at(long iteration, long total) const;
  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  long iterations = 5000;
  int batch_size = 8;
  int patch_size = 16;  // lq patch; gt patches are scale times larger
  LrSchedule lr;
  AdamConfig adam;
  ArchitectureSpec student = student_architecture(2);
  DistillSettings distill;
  EmaConfig ema;  // step_cap <= 0 is resolved to iterations / 2
  long checkpoint_every = 0;

  void validate() const;
  EmaConfig resolved_ema() const;
};

struct LossLogRow {
  long iter = 0;
  LossReport report;
  double lr = 0.0;
  long ema_step = 0;
};

/// Header of the per-step CSV.
inline constexpr const char* kLossCsvHeader = "iter,rec,kd,dcl,ce,total,lr,ema_step_s";
std::string format_loss_row(const LossLogRow& row);

struct TrainResult {
  RestorationModel student;
  std::vector<LossLogRow> log;
  std::vector<long> ema_refreshes;
};

/// Samples a batch of random aligned crops (with flips/transposes).
TrainingBatch sample_batch(std::span<const PairedSample> dataset, int batch_size, int patch,
                           Rng& rng);

/// Distillation loop: sample batch -> total_loss -> Adam step on the student
/// -> EMA schedule for the history model. With a non-empty `out_dir`, writes
/// loss.csv, periodic checkpoints and student.ckpt there. Non-finite losses
/// abort with NonFiniteLossError after dumping the batch and report.
TrainResult train(const TrainConfig& config, std::span<const PairedSample> dataset,
                  const DistillContext& context, const std::filesystem::path& out_dir = {});

/// L1-only training of a model on the same data pipeline; used to give the
/// toy task a converged teacher.
RestorationModel pretrain_teacher(const ArchitectureSpec& spec, std::span<const PairedSample> dataset,
                                  long iterations, int batch_size, int patch_size,
                                  const LrSchedule& lr, std::uint64_t seed);

}  // namespace dckd
