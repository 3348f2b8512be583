#include <gtest/gtest.h>

#include <filesystem>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dckd/errors.hpp"
#include "dckd/experiment.hpp"
#include "dckd/report.hpp"
#include "tiny_config.hpp"

using namespace dckd;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RunExperiment, WritesArtifactsAndManifest) {
  const auto dir = scratch_dir("run_artifacts");
  const RunResult r = run_experiment(tiny_document(), dir / "run");
  for (const char* f : {"config.toml", "manifest.json", "loss.csv", "student.ckpt", "teacher.ckpt",
                        "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  EXPECT_EQ(r.total_loss.size(), 6u);
  EXPECT_EQ(r.frozen_before, r.frozen_after);
  EXPECT_EQ(r.ema_refreshes, (std::vector<long>{2, 5}));  // step 2, then min(4, cap 3)

  const auto m = nlohmann::json::parse(read_file(dir / "run" / "manifest.json"));
  EXPECT_EQ(m["schema"], "dckd-run/1");
  EXPECT_EQ(m["seed"], 0);
  EXPECT_EQ(m["config_digest"], r.config_digest);
  EXPECT_EQ(m["config_values"]["dcr.num_negatives"], "2");
  EXPECT_TRUE(m["environment"].contains("compiler"));
  EXPECT_EQ(m["parameter_counts"]["student"], r.metric("student").params);

  const std::string metrics = read_file(dir / "run" / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsCsvHeader);
  EXPECT_EQ(r.metrics.size(), 8u);
  EXPECT_EQ(r.metric("bilinear", ChannelMode::rgb).params, 0u);

  // The canonical config reproduces the digest.
  const RunResult again = run_experiment(ConfigDocument::load(dir / "run" / "config.toml"), dir / "again");
  EXPECT_EQ(again.config_digest, r.config_digest);
  EXPECT_EQ(again.student_checksum, r.student_checksum);
  EXPECT_EQ(again.total_loss, r.total_loss);
}

TEST(RunExperiment, TeacherIsCachedAcrossRuns) {
  const auto dir = scratch_dir("teacher_cache");
  run_experiment(tiny_document(), dir / "a");
  const auto cache = dir / "runs" / ".teacher-cache";
  ASSERT_TRUE(fs::exists(cache));
  const auto count = [&] { return std::distance(fs::directory_iterator(cache), fs::directory_iterator{}); };
  EXPECT_EQ(count(), 1);
  auto doc = tiny_document();
  doc.set("loss.lambda_dcl", "0.5");
  run_experiment(doc, dir / "b");
  EXPECT_EQ(count(), 1);
  doc.set("teacher.iterations", "5");
  run_experiment(doc, dir / "c");
  EXPECT_EQ(count(), 2);
}

TEST(RunExperiment, ExplicitTeacherCheckpointMustMatchArchitecture) {
  const auto dir = scratch_dir("teacher_ckpt");
  run_experiment(tiny_document(), dir / "a");
  auto doc = tiny_document();
  doc.set("teacher.checkpoint", "\"" + (dir / "a" / "teacher.ckpt").string() + "\"");
  EXPECT_NO_THROW(run_experiment(doc, dir / "b"));
  doc.set("teacher.width", "16");
  EXPECT_THROW(run_experiment(doc, dir / "c"), std::exception);
}

TEST(RunExperiment, ConfigErrorsSurfaceBeforeTraining) {
  const auto dir = scratch_dir("config_error");
  auto doc = tiny_document();
  doc.set("train.patch_size", "6");  // gt patch 12 is not a multiple of 16
  EXPECT_THROW(run_experiment(doc, dir / "x"), ConfigError);
  EXPECT_FALSE(fs::exists(dir / "x" / "loss.csv"));
}

TEST(EvaluateCheckpoint, MatchesRunMetrics) {
  const auto dir = scratch_dir("eval_ckpt");
  const RunResult r = run_experiment(tiny_document(), dir / "run");
  const auto rows = evaluate_checkpoint(dir / "run" / "student.ckpt", tiny_document());
  ASSERT_EQ(rows.size(), 4u);  // checkpoint and bilinear, Y and RGB
  for (const auto& row : rows) {
    if (row.method == "bilinear") continue;
    EXPECT_EQ(row.method, "student");
    EXPECT_DOUBLE_EQ(row.psnr_db, r.metric("student", row.mode).psnr_db);
    EXPECT_DOUBLE_EQ(row.ssim, r.metric("student", row.mode).ssim);
  }
  auto doc = tiny_document();
  doc.set("task.scale", "4");
  doc.set("train.patch_size", "4");
  EXPECT_THROW(evaluate_checkpoint(dir / "run" / "student.ckpt", doc), std::exception);
}

TEST(Ablation, FailedCellIsRecordedAndOthersRun) {
  const auto dir = scratch_dir("ablation_fail");
  { std::ofstream(dir / "base.toml") << kTinyConfig; }
  {
    std::ofstream(dir / "grid.toml") << "[grid]\nname = \"t\"\nbase = \"base.toml\"\n"
                                        "[[axis]]\nkey = \"train.patch_size\"\nvalues = [8, 6, 16]\n";
  }
  const AblationResult r = run_ablation(ExperimentGrid::load(dir / "grid.toml"), dir / "out");
  ASSERT_EQ(r.cells.size(), 3u);
  EXPECT_EQ(r.failures(), 1u);
  EXPECT_TRUE(r.cells[0].ok);
  EXPECT_FALSE(r.cells[1].ok);
  EXPECT_NE(r.cells[1].error.find("multiple"), std::string::npos) << r.cells[1].error;
  EXPECT_TRUE(r.cells[2].ok);
  for (const char* f : {"results.csv", "table.txt", "plot.svg", "grid.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const std::string csv = read_file(dir / "out" / "results.csv");
  EXPECT_NE(csv.find("failed"), std::string::npos);
  EXPECT_NE(r.table.find("failed"), std::string::npos);
}

TEST(Ablation, CellsMatchStandaloneRuns) {
  const auto dir = scratch_dir("ablation_repro");
  { std::ofstream(dir / "base.toml") << kTinyConfig; }
  {
    std::ofstream(dir / "grid.toml") << "[grid]\nname = \"t\"\nbase = \"base.toml\"\nseeds = [0, 1]\n"
                                        "[[axis]]\nkey = \"loss.lambda_dcl\"\nvalues = [0.0, 0.1]\n";
  }
  const AblationResult r = run_ablation(ExperimentGrid::load(dir / "grid.toml"), dir / "out");
  ASSERT_EQ(r.failures(), 0u);
  const CellOutcome& cell = r.cells[3];
  auto doc = ConfigDocument::load(dir / "base.toml");
  for (const auto& a : cell.cell.assignments) doc.apply_override(a);
  const RunResult solo = run_experiment(doc, dir / "solo");
  EXPECT_EQ(solo.student_checksum, cell.result->student_checksum);
  EXPECT_EQ(solo.metric("student").psnr_db, cell.result->metric("student").psnr_db);
  EXPECT_NE(r.cells[0].result->student_checksum, r.cells[1].result->student_checksum);
}

TEST(Compare, SharesSeedAndReportsDeltas) {
  const auto dir = scratch_dir("compare");
  { std::ofstream(dir / "a.toml") << kTinyConfig << "[run]\nseed = 7\n"; }
  {
    std::string b = kTinyConfig;
    std::ofstream(dir / "b.toml") << b << "[loss]\nlambda_dcl = 0.0\nlambda_ce = 0.0\n";
  }
  const CompareResult r = run_compare({dir / "a.toml", dir / "b.toml"}, {}, dir / "out");
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.runs[0].seed, 7u);
  EXPECT_EQ(r.runs[1].seed, 7u);
  EXPECT_TRUE(fs::exists(dir / "out" / "compare.csv"));
  EXPECT_NE(r.table.find("teacher (reference)"), std::string::npos);
  EXPECT_THROW(run_compare({dir / "a.toml"}, {}, dir / "out2"), std::exception);
}

TEST(Report, TextTableAligns) {
  const std::string t = render_text_table({"a", "long header"}, {{"xyz", "1"}, {"q", "22"}});
  std::istringstream in(t);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[1].find("-+-"), lines[0].find(" | "));
  for (std::size_t i : {0u, 2u, 3u}) EXPECT_EQ(lines[i].find(" | "), 3u) << lines[i];
  EXPECT_EQ(format_psnr_ssim(26.4812, 0.88451), "26.48/0.8845");
  EXPECT_EQ(format_psnr_ssim(std::nan(""), 0.5), "failed");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("plain"), "plain");
}

TEST(Report, SvgHasOnePathPerSeries) {
  LinePlot p;
  p.title = "t";
  p.x_ticks = {"1", "3", "5"};
  p.series = {{"a", {1, 2, 3}}, {"b", {2, std::nan(""), 1}}};
  const std::string svg = render_svg(p);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  std::size_t paths = 0;
  for (auto pos = svg.find("<path"); pos != std::string::npos; pos = svg.find("<path", pos + 1)) ++paths;
  EXPECT_GE(paths, 2u);
}

TEST(Environment, DigestIsStable) {
  EXPECT_EQ(digest_hex("abc"), digest_hex("abc"));
  EXPECT_NE(digest_hex("abc"), digest_hex("abd"));
  EXPECT_EQ(digest_hex("").size(), 16u);
  EXPECT_EQ(digest_hex(""), "cbf29ce484222325");  // FNV-1a 64 offset basis
}
