#include "dckd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dckd/array_file.hpp"
#include "dckd/errors.hpp"

namespace dckd {
namespace {

void add_scaled(Tensor& dst, const Tensor& src, double scale) {
  if (src.empty() || scale == 0.0) return;
  if (dst.empty()) {
    dst = src;
    dst *= scale;
    return;
  }
  require_same_shape(dst, src, "gradient accumulation");
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
}

double mean_abs_diff(const Image& a, const Image& b, const char* what) {
  require_same_shape(a, b, what);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s / static_cast<double>(a.size());
}

std::filesystem::path dump_nonfinite(const std::filesystem::path& out_dir, long iter,
                                     const TrainingBatch& batch, const LossReport& report) {
  const auto dir = out_dir.empty() ? std::filesystem::temp_directory_path() / "dckd-dumps" : out_dir;
  std::filesystem::create_directories(dir);
  const auto path = dir / ("nonfinite_iter" + std::to_string(iter) + ".bin");
  ArrayFile file;
  file.meta = {{"kind", "nonfinite_dump"},
               {"iteration", iter},
               {"report",
                {{"rec", report.rec}, {"kd", report.kd}, {"dcl", report.dcl}, {"ce", report.ce},
                 {"total", report.total}}}};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& lq = batch.lq[i];
    const auto& gt = batch.gt[i];
    file.arrays.entries().push_back(
        {"lq" + std::to_string(i), {lq.height(), lq.width(), lq.channels()},
         {lq.values().begin(), lq.values().end()}});
    file.arrays.entries().push_back(
        {"gt" + std::to_string(i), {gt.height(), gt.width(), gt.channels()},
         {gt.values().begin(), gt.values().end()}});
  }
  write_array_file(path, file);
  return path;
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {kd, dcl, ce}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("loss weights must be finite and >= 0");
  }
}

bool LossReport::finite() const {
  return std::isfinite(rec) && std::isfinite(kd) && std::isfinite(dcl) && std::isfinite(ce) &&
         std::isfinite(total);
}

double recompose_total(const LossReport& r, const LossWeights& w) {
  return r.rec + w.kd * r.kd + w.dcl * r.dcl + w.ce * r.ce;
}

double reconstruction_loss(const Image& student_out, const Image& gt) {
  return mean_abs_diff(student_out, gt, "reconstruction_loss");
}

double kd_loss(const Image& student_out, const Image& teacher_out) {
  return mean_abs_diff(student_out, teacher_out, "kd_loss");
}

void accumulate_l1_grad(const Image& a, const Image& b, double scale, Image& grad) {
  require_same_shape(a, b, "l1 gradient");
  if (grad.empty()) grad = Image(a.height(), a.width(), a.channels());
  require_same_shape(a, grad, "l1 gradient");
  const double s = scale / static_cast<double>(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    grad[k] += s * static_cast<double>((d > 0.0) - (d < 0.0));
  }
}

void DistillSettings::validate() const {
  weights.validate();
  if (num_negatives < 1) throw ParameterError("dcr.num_negatives must be >= 1");
  if (!(dcl_eps > 0.0)) throw ParameterError("dcr.eps must be > 0");
  ranges.validate();
  dmm.validate();
}

LossEvaluation total_loss(const TrainingBatch& batch, const RestorationModel& student,
                          const DistillContext& context, const DistillSettings& settings, Rng& rng,
                          bool want_grad) {
  if (batch.size() == 0 || batch.lq.size() != batch.gt.size()) {
    throw StructuralError("total_loss: batch must hold matching, non-empty lq/gt lists");
  }
  const LossWeights& w = settings.weights;
  if (settings.needs_teacher()) {
    if (context.teacher == nullptr) throw StructuralError("total_loss: teacher required");
    if (context.teacher->trainable()) throw StructuralError("total_loss: teacher must be frozen");
  }
  if (settings.needs_encoder() && context.encoder == nullptr) {
    throw StructuralError("total_loss: encoder required");
  }
  if (w.dcl > 0 && context.history == nullptr) {
    throw StructuralError("total_loss: history model required for the contrastive term");
  }
  if (w.ce > 0 && context.codebook == nullptr) {
    throw StructuralError("total_loss: codebook required for the distribution term");
  }

  LossEvaluation eval;
  LossReport& rep = eval.report;
  if (want_grad) eval.student_grads = student.extract_params().zeros_like();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Image& lq = batch.lq[b];
    const Image& gt = batch.gt[b];
    RestorationModel::Trace trace;
    const Image out = student.forward(lq, trace);

    Image grad_out;
    rep.rec += reconstruction_loss(out, gt) * inv_b;
    if (want_grad) accumulate_l1_grad(out, gt, inv_b, grad_out);

    Image teacher_out;
    if (settings.needs_teacher()) teacher_out = context.teacher->forward(lq);
    if (w.kd > 0) {
      rep.kd += kd_loss(out, teacher_out) * inv_b;
      if (want_grad) accumulate_l1_grad(out, teacher_out, w.kd * inv_b, grad_out);
    }

    if (settings.needs_encoder()) {
      const FeatureEncoder& enc = *context.encoder;
      FeatureEncoder::Trace enc_trace;
      const FeaturePyramid anchor = enc.encode(out, enc_trace);
      const FeaturePyramid positive = enc.encode(teacher_out);
      std::vector<Tensor> level_grads(anchor.size());

      if (w.dcl > 0) {
        const NegativeBatch negs = generate_negatives(*context.history, lq, settings.num_negatives,
                                                      settings.policy, settings.ranges, rng);
        std::vector<FeaturePyramid> neg_features;
        neg_features.reserve(negs.size());
        for (const auto& n : negs.images) neg_features.push_back(enc.encode(n));
        const ContrastiveTerms terms =
            contrastive_from_features(anchor, positive, neg_features, settings.dcl_eps, want_grad);
        rep.dcl += terms.value * inv_b;
        if (want_grad) {
          for (std::size_t i = 0; i < level_grads.size(); ++i) {
            add_scaled(level_grads[i], terms.anchor_grads[i], w.dcl * inv_b);
          }
        }
      }
      if (w.ce > 0) {
        const LossWithGrad ce = dmm_from_features(positive.levels.back(), anchor.levels.back(),
                                                  *context.codebook, settings.dmm, want_grad);
        rep.ce += ce.value * inv_b;
        if (want_grad) add_scaled(level_grads.back(), ce.grad, w.ce * inv_b);
      }
      if (want_grad) grad_out += enc.backward(enc_trace, level_grads);
    }

    if (want_grad) student.backward(trace, grad_out, &eval.student_grads);
  }
  rep.total = recompose_total(rep, w);
  return eval;
}

Adam::Adam(const ParamVector& like, AdamConfig config)
    : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(RestorationModel& model, const ParamVector& grads, double lr) {
  if (!model.trainable()) return;
  ParamVector& params = model.trainable_params();
  require_compatible(params, grads, "adam step");
  require_compatible(params, m_, "adam state");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values;
    const auto& g = grads[i].values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config_.eps);
    }
  }
}

double LrSchedule::at(long iteration, long total) const {
  double lr = initial;
  for (double m : milestones) {
    if (static_cast<double>(iteration) >= m * static_cast<double>(total)) lr *= decay;
  }
  return lr;
}

void LrSchedule::validate() const {
  if (!(initial > 0.0)) throw ParameterError("train.lr must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ParameterError("train.lr_decay must lie in (0, 1]");
  for (double m : milestones) {
    if (!(m > 0.0 && m < 1.0)) throw ParameterError("train.lr_milestones must lie in (0, 1)");
  }
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ParameterError("train.iterations must be >= 1");
  if (batch_size < 1) throw ParameterError("train.batch_size must be >= 1");
  if (patch_size < 1) throw ParameterError("train.patch_size must be >= 1");
  if (checkpoint_every < 0) throw ParameterError("train.checkpoint_every must be >= 0");
  lr.validate();
  student.validate();
  distill.validate();
  resolved_ema().validate();
}

EmaConfig TrainConfig::resolved_ema() const {
  EmaConfig e = ema;
  if (e.step_cap <= 0) e.step_cap = std::max(e.initial_step, iterations / 2);
  return e;
}

std::string format_loss_row(const LossLogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%ld", row.iter,
                row.report.rec, row.report.kd, row.report.dcl, row.report.ce, row.report.total,
                row.lr, row.ema_step);
  return buf;
}

TrainingBatch sample_batch(std::span<const PairedSample> dataset, int batch_size, int patch,
                           Rng& rng) {
  if (dataset.empty()) throw ParameterError("dataset must not be empty");
  TrainingBatch batch;
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  for (int i = 0; i < batch_size; ++i) {
    PairedSample s = crop_augment(dataset[pick(rng)], patch, rng);
    batch.lq.push_back(std::move(s.lq));
    batch.gt.push_back(std::move(s.gt));
  }
  return batch;
}

TrainResult train(const TrainConfig& config, std::span<const PairedSample> dataset,
                  const DistillContext& context, const std::filesystem::path& out_dir) {
  config.validate();
  if (dataset.empty()) throw ParameterError("train: dataset must not be empty");

  Rng rng(config.seed);
  RestorationModel student(config.student, rng());
  RestorationModel history = student;
  history.freeze();
  EmaState ema(student.extract_params(), config.resolved_ema());
  Adam adam(student.extract_params(), config.adam);

  DistillContext ctx = context;
  ctx.history = &history;

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir / "loss.csv", std::ios::trunc);
    csv << kLossCsvHeader << "\n";
  }

  TrainResult result{student, {}, {}};
  result.log.reserve(config.iterations);
  for (long t = 1; t <= config.iterations; ++t) {
    const double lr = config.lr.at(t - 1, config.iterations);
    const TrainingBatch batch = sample_batch(dataset, config.batch_size, config.patch_size, rng);
    LossEvaluation eval = total_loss(batch, student, ctx, config.distill, rng, true);
    if (!eval.report.finite()) {
      const auto dump = dump_nonfinite(out_dir, t, batch, eval.report);
      throw NonFiniteLossError("non-finite loss at iteration " + std::to_string(t) +
                                   " (rec=" + std::to_string(eval.report.rec) +
                                   ", kd=" + std::to_string(eval.report.kd) +
                                   ", dcl=" + std::to_string(eval.report.dcl) +
                                   ", ce=" + std::to_string(eval.report.ce) + ")",
                               dump.string());
    }
    adam.step(student, eval.student_grads, lr);
    if (ema.maybe_update(student.extract_params(), t)) {
      history.inject_params(ema.history());
      result.ema_refreshes.push_back(t);
    }
    LossLogRow row{t, eval.report, lr, ema.step()};
    if (csv.is_open()) csv << format_loss_row(row) << "\n";
    result.log.push_back(row);
    if (!out_dir.empty() && config.checkpoint_every > 0 && t % config.checkpoint_every == 0 &&
        t != config.iterations) {
      save_checkpoint(out_dir / ("student_iter" + std::to_string(t) + ".ckpt"), student,
                      {t, config.seed, {}});
    }
  }
  if (!out_dir.empty()) {
    save_checkpoint(out_dir / "student.ckpt", student, {config.iterations, config.seed, {}});
  }
  result.student = std::move(student);
  return result;
}

RestorationModel pretrain_teacher(const ArchitectureSpec& spec, std::span<const PairedSample> dataset,
                                  long iterations, int batch_size, int patch_size,
                                  const LrSchedule& lr, std::uint64_t seed) {
  if (iterations < 0) throw ParameterError("teacher.iterations must be >= 0");
  Rng rng(seed);
  RestorationModel teacher(spec, rng());
  Adam adam(teacher.extract_params());
  DistillSettings l1_only;
  l1_only.weights = {0.0, 0.0, 0.0};
  for (long t = 1; t <= iterations; ++t) {
    const TrainingBatch batch = sample_batch(dataset, batch_size, patch_size, rng);
    const LossEvaluation eval = total_loss(batch, teacher, {}, l1_only, rng, true);
    if (!eval.report.finite()) throw NonFiniteLossError("teacher pretraining diverged", "");
    adam.step(teacher, eval.student_grads, lr.at(t - 1, iterations));
  }
  teacher.freeze();
  return teacher;
}

}  // namespace dckd
