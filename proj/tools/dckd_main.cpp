// Command-line front end: run, ablate, compare, eval, gen-corpus, gen-codebook.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dckd/config.hpp"
#include "dckd/data.hpp"
#include "dckd/errors.hpp"
#include "dckd/experiment.hpp"
#include "dckd/report.hpp"

namespace fs = std::filesystem;
using namespace dckd;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNonFinite = 3, kCellsFailed = 4 };

ConfigDocument load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  ConfigDocument doc = path.empty() ? ConfigDocument{} : ConfigDocument::load(path);
  for (const auto& s : sets) doc.apply_override(s);
  return doc;
}

void print_metrics(const std::vector<MetricRow>& rows) {
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    table.push_back({r.method, to_string(r.mode), format_psnr_ssim(r.psnr_db, r.ssim),
                     std::to_string(r.params)});
  }
  std::cout << render_text_table({"method", "mode", "PSNR/SSIM", "params"}, table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic contrastive knowledge distillation on a toy restoration task"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string degradation;
  auto* run = app.add_subcommand("run", "Train one configuration and evaluate it");
  run->add_option("-c,--config", config_path, "Config file (TOML subset)")->check(CLI::ExistingFile);
  run->add_option("--set", sets, "Override key=value (repeatable)");
  run->add_option("-o,--out", out_dir, "Run directory (default: $DCKD_RUNS_ROOT/<name>-<digest>)");
  run->add_option("--degradation", degradation, "Shortcut for dcr.degradation_policy");

  std::string grid_path;
  auto* ablate = app.add_subcommand("ablate", "Run every cell of an ablation grid");
  ablate->add_option("-g,--grid", grid_path, "Grid file")->required()->check(CLI::ExistingFile);
  ablate->add_option("-o,--out", out_dir, "Output directory");

  std::vector<std::string> compare_configs;
  auto* compare = app.add_subcommand("compare", "Train several configs with a shared seed");
  compare->add_option("configs", compare_configs, "Config files")->required()->check(CLI::ExistingFile);
  compare->add_option("--set", sets, "Override applied to every config (repeatable)");
  compare->add_option("-o,--out", out_dir, "Output directory");

  std::string checkpoint;
  std::string csv_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out set");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("-c,--config", config_path, "Config defining the held-out set")->check(CLI::ExistingFile);
  eval->add_option("--set", sets, "Override key=value (repeatable)");
  eval->add_option("--csv", csv_out, "Also write the metrics CSV here");

  std::uint64_t corpus_seed = 1;
  int corpus_count = 16;
  int corpus_size = 64;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "Write the procedural corpus as PPM files");
  gen_corpus->add_option("--seed", corpus_seed, "Generator seed");
  gen_corpus->add_option("--count", corpus_count, "Number of images")->check(CLI::PositiveNumber);
  gen_corpus->add_option("--size", corpus_size, "Image side length")->check(CLI::PositiveNumber);
  gen_corpus->add_option("-o,--out", out_dir, "Output directory")->required();

  std::string codebook_out;
  std::string encoder_out;
  auto* gen_codebook = app.add_subcommand("gen-codebook", "Build and save the k-means codebook of a config");
  gen_codebook->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  gen_codebook->add_option("--set", sets, "Override key=value (repeatable)");
  gen_codebook->add_option("-o,--out", codebook_out, "Codebook file")->required();
  gen_codebook->add_option("--encoder-out", encoder_out, "Also save the encoder weights");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!degradation.empty()) sets.push_back("dcr.degradation_policy=" + degradation);
      const RunResult r = run_experiment(load_with_overrides(config_path, sets), out_dir, &std::cout);
      print_metrics(r.metrics);
      std::cout << "run directory: " << r.run_dir.string() << "\n";
    } else if (*ablate) {
      const AblationResult r = run_ablation(ExperimentGrid::load(grid_path), out_dir, &std::cout);
      std::cout << "\n" << r.table << "results: " << r.out_dir.string() << "\n";
      if (r.failures() > 0) {
        std::cerr << r.failures() << " of " << r.cells.size() << " cells failed\n";
        return kCellsFailed;
      }
    } else if (*compare) {
      std::vector<fs::path> paths(compare_configs.begin(), compare_configs.end());
      const CompareResult r = run_compare(paths, sets, out_dir, &std::cout);
      std::cout << "\n" << r.table;
    } else if (*eval) {
      const auto rows = evaluate_checkpoint(checkpoint, load_with_overrides(config_path, sets));
      print_metrics(rows);
      if (!csv_out.empty()) write_metrics_csv(csv_out, rows);
    } else if (*gen_corpus) {
      save_corpus(out_dir, make_toy_corpus(corpus_seed, corpus_count, corpus_size), corpus_seed,
                  corpus_size);
      std::cout << "wrote " << corpus_count << " images to " << out_dir << "\n";
    } else if (*gen_codebook) {
      const ExperimentConfig cfg = experiment_from_document(load_with_overrides(config_path, sets));
      const FeatureEncoder encoder = obtain_encoder(cfg);
      const Codebook cb = obtain_codebook(cfg, encoder);
      save_codebook(codebook_out, cb);
      if (!encoder_out.empty()) save_encoder(encoder_out, encoder);
      std::cout << "wrote codebook " << cb.size() << "x" << cb.dim() << " to " << codebook_out << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << "\ndiagnostic dump: " << e.dump_path() << "\n";
    return kNonFinite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
