#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dckd/array_file.hpp"
#include "dckd/errors.hpp"
#include "dckd/trainer.hpp"
#include "test_util.hpp"

using namespace dckd;
using namespace dckd::test;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.channels = {4, 8, 8, 8};
  c.level_weights = {0.125, 0.25, 0.5, 1.0};
  return c;
}

struct Fixture {
  RestorationModel teacher{{3, 6, 2, 2}, 21};
  RestorationModel history{{3, 4, 1, 2}, 22};
  FeatureEncoder encoder{small_encoder()};
  Codebook codebook;
  TrainingBatch batch;

  Fixture() : codebook(make_codebook()) {
    teacher.freeze();
    history.freeze();
    Rng rng(23);
    for (int b = 0; b < 2; ++b) {
      batch.lq.push_back(random_tensor(4, 4, 3, rng));
      batch.gt.push_back(random_tensor(8, 8, 3, rng));
    }
  }
  static Codebook make_codebook() {
    Rng rng(24);
    return Codebook(6, 8, values_of(random_tensor(6, 8, 1, rng, -0.3, 0.3)));
  }
  DistillContext context() const { return {&teacher, &history, &encoder, &codebook}; }
};

std::vector<PairedSample> toy_dataset(int n, int size, int scale) {
  std::vector<PairedSample> out;
  for (const auto& gt : make_toy_corpus(5, n, size)) out.push_back(synth_pair(gt, scale));
  return out;
}

}  // namespace

TEST(Losses, ReconstructionExamples) {
  const Image a(4, 4, 3, 0.2), b(4, 4, 3, 0.5);
  EXPECT_NEAR(reconstruction_loss(a, b), 0.3, 1e-15);
  EXPECT_EQ(reconstruction_loss(a, a), 0.0);
  Rng rng(1);
  const Image x = random_tensor(3, 3, 3, rng), y = random_tensor(3, 3, 3, rng);
  EXPECT_EQ(reconstruction_loss(x, y), reconstruction_loss(y, x));
  EXPECT_THROW(reconstruction_loss(a, Image(4, 4, 1)), StructuralError);
}

TEST(Losses, KdExamples) {
  EXPECT_NEAR(kd_loss(Image(2, 2, 3, 0.0), Image(2, 2, 3, 1.0)), 1.0, 1e-15);
  const Image t(2, 2, 3, 0.4);
  EXPECT_EQ(kd_loss(t, t), 0.0);
}

TEST(Losses, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.dcl, 0.1);
  EXPECT_EQ(w.ce, 0.001);
  EXPECT_EQ(w.kd, 1.0);
  const DistillSettings s;
  EXPECT_EQ(s.num_negatives, 5);
  EXPECT_EQ(s.policy, DegradationPolicy::noise);
  EXPECT_EQ(s.dcl_eps, 1e-8);
}

TEST(TotalLoss, RecomposesFromIndependentComponents) {
  Fixture f;
  DistillSettings s;
  s.num_negatives = 3;
  Rng rng(5);
  Rng replay = rng;
  const LossEvaluation e = total_loss(f.batch, RestorationModel({3, 4, 1, 2}, 30), f.context(), s, rng, false);
  const RestorationModel student({3, 4, 1, 2}, 30);

  double rec = 0, kd = 0, dcl = 0, ce = 0;
  for (std::size_t b = 0; b < f.batch.size(); ++b) {
    const Image out = student.forward(f.batch.lq[b]);
    const Image t = f.teacher.forward(f.batch.lq[b]);
    rec += reconstruction_loss(out, f.batch.gt[b]) / 2;
    kd += kd_loss(out, t) / 2;
    const NegativeBatch negs = generate_negatives(f.history, f.batch.lq[b], 3, s.policy, s.ranges, replay);
    dcl += dynamic_contrastive_loss(out, t, negs, f.encoder, s.dcl_eps, false).value / 2;
    ce += dmm_loss(t, out, f.encoder, f.codebook, s.dmm, false).value / 2;
  }
  EXPECT_NEAR(e.report.rec, rec, 1e-14);
  EXPECT_NEAR(e.report.kd, kd, 1e-14);
  EXPECT_NEAR(e.report.dcl, dcl, 1e-12);
  EXPECT_NEAR(e.report.ce, ce, 1e-12);
  const double total = rec + kd + 0.1 * dcl + 0.001 * ce;
  EXPECT_NEAR(e.report.total, total, 1e-9 * total);
  EXPECT_GE(e.report.dcl, 0.0);
  EXPECT_GE(e.report.ce, 0.0);
}

TEST(TotalLoss, ZeroWeightsReduceToVanillaKd) {
  Fixture f;
  DistillSettings s;
  s.weights = {1.0, 0.0, 0.0};
  Rng rng(6);
  const RestorationModel student({3, 4, 1, 2}, 31);
  // Collaborators that the vanilla objective does not need may be absent.
  const LossEvaluation e = total_loss(f.batch, student, {&f.teacher, nullptr, nullptr, nullptr}, s, rng, false);
  EXPECT_EQ(e.report.dcl, 0.0);
  EXPECT_EQ(e.report.ce, 0.0);
  EXPECT_EQ(e.report.total, e.report.rec + e.report.kd);
}

TEST(TotalLoss, GradientMatchesFiniteDifferencesOnOneLayerStudent) {
  Fixture f;
  DistillSettings s;
  s.num_negatives = 2;
  RestorationModel student({3, 4, 1, 2}, 32);
  const Rng start(7);
  Rng rng = start;
  const LossEvaluation e = total_loss(f.batch, student, f.context(), s, rng, true);
  for (std::size_t k = 0; k < e.student_grads.size(); ++k) {
    const auto fd = numeric_gradient(student.extract_params()[k].values, [&](const auto& v) {
      RestorationModel probe = student;
      ParamVector p = probe.extract_params();
      p[k].values = v;
      probe.inject_params(p);
      Rng r = start;
      return total_loss(f.batch, probe, f.context(), s, r, false).report.total;
    });
    EXPECT_LT(relative_error(e.student_grads[k].values, fd), 1e-3) << e.student_grads[k].name;
  }
}

TEST(TotalLoss, RequiresFrozenTeacherAndCollaborators) {
  Fixture f;
  RestorationModel live({3, 6, 2, 2}, 1);
  DistillSettings s;
  Rng rng(1);
  const RestorationModel student({3, 4, 1, 2}, 1);
  EXPECT_THROW(total_loss(f.batch, student, {&live, &f.history, &f.encoder, &f.codebook}, s, rng), StructuralError);
  EXPECT_THROW(total_loss(f.batch, student, {&f.teacher, &f.history, nullptr, &f.codebook}, s, rng), StructuralError);
  EXPECT_THROW(total_loss(f.batch, student, {&f.teacher, &f.history, &f.encoder, nullptr}, s, rng), StructuralError);
  EXPECT_THROW(total_loss(f.batch, student, {&f.teacher, nullptr, &f.encoder, &f.codebook}, s, rng), StructuralError);
}

TEST(Adam, OneStepMovesEveryParameterAgainstGradient) {
  RestorationModel m({3, 4, 1, 1}, 3);
  const ParamVector before = m.extract_params();
  ParamVector g = before.zeros_like();
  for (auto& e : g.entries())
    for (double& v : e.values) v = 0.5;
  Adam adam(before);
  adam.step(m, g, 1e-2);
  const ParamVector after = m.extract_params();
  for (std::size_t i = 0; i < after.size(); ++i)
    for (std::size_t k = 0; k < after[i].values.size(); ++k)
      EXPECT_NEAR(after[i].values[k], before[i].values[k] - 1e-2, 1e-9);  // bias-corrected first step
  EXPECT_EQ(adam.steps(), 1);
}

TEST(LrSchedule, HalvesAtMilestones) {
  const LrSchedule lr;
  EXPECT_EQ(lr.at(0, 5000), 1e-3);
  EXPECT_EQ(lr.at(2999, 5000), 1e-3);
  EXPECT_EQ(lr.at(3000, 5000), 5e-4);
  EXPECT_EQ(lr.at(4000, 5000), 2.5e-4);
  EXPECT_EQ(lr.at(4999, 5000), 2.5e-4);
}

TEST(TrainConfig, DefaultsAndEmaCapResolution) {
  TrainConfig c;
  EXPECT_EQ(c.iterations, 5000);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.patch_size, 16);
  EXPECT_EQ(c.adam.beta1, 0.9);
  EXPECT_EQ(c.adam.beta2, 0.99);
  EXPECT_EQ(c.adam.eps, 1e-8);
  c.ema.step_cap = 0;
  EXPECT_EQ(c.resolved_ema().step_cap, 2500);
  c.iterations = 100;
  EXPECT_EQ(c.resolved_ema().step_cap, 1000);
  c.ema.step_cap = 1500;
  EXPECT_EQ(c.resolved_ema().step_cap, 1500);
}

TEST(Train, SameSeedGivesBitIdenticalCheckpoints) {
  const auto data = toy_dataset(4, 32, 2);
  RestorationModel teacher({3, 8, 2, 2}, 1);
  teacher.freeze();
  FeatureEncoder enc;
  std::vector<Image> imgs;
  for (const auto& s : data) imgs.push_back(s.gt);
  const Codebook cb = build_codebook(enc, imgs, 8, 0);
  TrainConfig cfg;
  cfg.iterations = 12;
  cfg.batch_size = 2;
  cfg.ema.initial_step = 4;
  cfg.ema.step_cap = 0;
  cfg.checkpoint_every = 5;
  const auto d1 = fs::temp_directory_path() / "dckd_train_a";
  const auto d2 = fs::temp_directory_path() / "dckd_train_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  const FeatureEncoder enc_before = enc;
  const ParamVector teacher_before = teacher.extract_params();
  const TrainResult a = train(cfg, data, {&teacher, nullptr, &enc, &cb}, d1);
  const TrainResult b = train(cfg, data, {&teacher, nullptr, &enc, &cb}, d2);
  EXPECT_EQ(a.student.extract_params(), b.student.extract_params());
  EXPECT_EQ(read_array_file(d1 / "student.ckpt").arrays, read_array_file(d2 / "student.ckpt").arrays);
  EXPECT_TRUE(fs::exists(d1 / "student_iter5.ckpt"));
  EXPECT_TRUE(fs::exists(d1 / "student_iter10.ckpt"));
  EXPECT_EQ(a.ema_refreshes, (std::vector<long>{4, 10}));  // cap resolves to 6
  EXPECT_EQ(teacher.extract_params(), teacher_before);
  EXPECT_EQ(enc.params(), enc_before.params());
  EXPECT_NE(a.student.extract_params(), RestorationModel(cfg.student, Rng(cfg.seed)()).extract_params());

  std::ifstream csv(d1 / "loss.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "iter,rec,kd,dcl,ce,total,lr,ema_step_s");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 12);
  for (const auto& row : a.log) {
    EXPECT_TRUE(row.report.finite());
    EXPECT_NEAR(row.report.total, recompose_total(row.report, cfg.distill.weights), 1e-12);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const auto data = toy_dataset(2, 32, 2);
  RestorationModel teacher({3, 8, 2, 2}, 1);
  ParamVector p = teacher.extract_params();
  p[0].values[0] = std::numeric_limits<double>::quiet_NaN();
  teacher.inject_params(p);
  teacher.freeze();
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.batch_size = 1;
  cfg.distill.weights = {1.0, 0.0, 0.0};
  const auto dir = fs::temp_directory_path() / "dckd_train_nan";
  fs::remove_all(dir);
  try {
    train(cfg, data, {&teacher, nullptr, nullptr, nullptr}, dir);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_TRUE(fs::exists(e.dump_path()));
    const ArrayFile dump = read_array_file(e.dump_path());
    EXPECT_EQ(dump.meta["kind"], "nonfinite_dump");
    EXPECT_EQ(dump.arrays.size(), 2u);
  }
  fs::remove_all(dir);
}

TEST(Train, RejectsEmptyDatasetAndBadConfig) {
  TrainConfig cfg;
  std::vector<PairedSample> none;
  EXPECT_THROW(train(cfg, none, {}), ParameterError);
  cfg.iterations = 0;
  const auto data = toy_dataset(1, 32, 2);
  EXPECT_THROW(train(cfg, data, {}), ParameterError);
}
