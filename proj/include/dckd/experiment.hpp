#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dckd/config.hpp"
#include "dckd/data.hpp"
#include "dckd/encoder.hpp"
#include "dckd/models.hpp"

namespace dckd {

/// Version string recorded in manifests.
std::string library_version();

/// $DCKD_RUNS_ROOT, or ./runs when unset.
std::filesystem::path runs_root();

/// Hex FNV-1a digest of a string (16 chars).
std::string digest_hex(const std::string& text);

/// Compiler, flags and library versions, plus their digest.
nlohmann::json environment_info();

struct ExperimentData {
  std::vector<PairedSample> train;
  std::vector<PairedSample> heldout;
};

ExperimentData prepare_data(const ExperimentConfig& config);

/// Student exactly as `train` initializes it for this seed.
RestorationModel initial_student(const TrainConfig& config);

/// Loads teacher.checkpoint, or pretrains the teacher and caches it under
/// runs_root()/.teacher-cache keyed by everything the pretraining depends on.
RestorationModel obtain_teacher(const ExperimentConfig& config, const ExperimentData& data,
                                std::ostream* log = nullptr);

FeatureEncoder obtain_encoder(const ExperimentConfig& config);
/// Loads dmm.codebook_path, or runs k-means over a dedicated synthetic set.
Codebook obtain_codebook(const ExperimentConfig& config, const FeatureEncoder& encoder);

struct MetricRow {
  std::string method;  // student, untrained, teacher, bilinear
  ChannelMode mode = ChannelMode::y;
  double psnr_db = 0.0;  // mean reported (capped) PSNR over the held-out set
  double ssim = 0.0;
  std::size_t params = 0;
};

/// Mean PSNR/SSIM of `model` on the held-out pairs.
MetricRow evaluate_model(const std::string& method, const RestorationModel& model,
                         const std::vector<PairedSample>& heldout, ChannelMode mode);
/// Bilinear upsampling of the LQ input; a model-free reference row.
MetricRow evaluate_bilinear(const std::vector<PairedSample>& heldout, ChannelMode mode);

inline constexpr const char* kMetricsCsvHeader = "method,channel_mode,psnr_db,ssim,params";
std::string format_metric_row(const MetricRow& row);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct FrozenChecksums {
  std::uint64_t teacher = 0;
  std::uint64_t encoder = 0;
  std::uint64_t codebook = 0;

  friend bool operator==(const FrozenChecksums&, const FrozenChecksums&) = default;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<MetricRow> metrics;
  std::vector<double> total_loss;  // per step
  std::vector<long> ema_refreshes;
  FrozenChecksums frozen_before;
  FrozenChecksums frozen_after;
  std::uint64_t student_checksum = 0;
  double train_seconds = 0.0;
  ChannelMode eval_channel = ChannelMode::y;

  /// Metric row for `method` in the configured evaluation channel mode.
  const MetricRow& metric(const std::string& method) const;
  const MetricRow& metric(const std::string& method, ChannelMode mode) const;
};

/// Directory name used when no explicit output directory is given.
std::string default_run_name(const ExperimentConfig& config, const std::string& digest);

/// Trains, evaluates, and writes config.toml, manifest.json, loss.csv,
/// student.ckpt, teacher.ckpt and metrics.csv into the run directory.
/// Throws ConfigError, NonFiniteLossError, or StructuralError (frozen state changed).
RunResult run_experiment(const ConfigDocument& doc, const std::filesystem::path& out_dir = {},
                         std::ostream* log = nullptr);

/// Metrics of an existing checkpoint on the held-out set of `doc`.
std::vector<MetricRow> evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                           const ConfigDocument& doc);

struct GridAxis {
  std::string key;
  std::vector<std::string> values;  // TOML literals
  std::vector<std::string> labels;  // display names, same length as values
  std::string title;
};

/// Layouts: "rows" (one row per cell, one column per axis), "columns" (each
/// axis as a header row over its values; one-axis grids only), "matrix"
/// (two axes as rows x columns).
struct ExperimentGrid {
  std::string name;
  std::filesystem::path base_config;
  std::vector<std::uint64_t> seeds{0};
  std::vector<GridAxis> axes;
  std::vector<std::string> overrides;  // applied to every cell before the axes
  std::string layout = "rows";

  static ExperimentGrid load(const std::filesystem::path& path);
  static ExperimentGrid from_document(const ConfigDocument& doc);
  void validate() const;
};

struct GridCell {
  std::size_t index = 0;
  std::vector<std::size_t> value_index;  // per axis
  std::uint64_t seed = 0;
  std::vector<std::string> assignments;  // "key=literal", including run.seed
  std::string label;
};

/// Cartesian product, first axis outermost, seeds innermost.
std::vector<GridCell> expand_grid(const ExperimentGrid& grid);

struct CellOutcome {
  GridCell cell;
  bool ok = false;
  std::string error;
  std::optional<RunResult> result;
};

struct AblationResult {
  ExperimentGrid grid;
  std::vector<CellOutcome> cells;
  std::filesystem::path out_dir;
  std::string table;

  std::size_t failures() const;
};

/// Runs every cell (failures are recorded and the rest still run), then writes
/// results.csv, table.txt, plot.svg and grid.json into `out_dir`.
AblationResult run_ablation(const ExperimentGrid& grid, const std::filesystem::path& out_dir = {},
                            std::ostream* log = nullptr);

struct CompareResult {
  std::vector<RunResult> runs;
  std::vector<std::string> names;
  std::string table;
};

/// Trains each config with the shared seed of the first one and reports
/// PSNR/SSIM deltas against the first.
CompareResult run_compare(const std::vector<std::filesystem::path>& configs,
                          const std::vector<std::string>& overrides,
                          const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr);

}  // namespace dckd
