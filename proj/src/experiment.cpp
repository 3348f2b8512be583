#include "dckd/experiment.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "dckd/degradation.hpp"
#include "dckd/errors.hpp"
#include "dckd/report.hpp"
#include "dckd/trainer.hpp"

#ifndef DCKD_VERSION
#define DCKD_VERSION "0.0.0"
#endif
#ifndef DCKD_GIT_REV
#define DCKD_GIT_REV "unknown"
#endif

namespace dckd {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write '" + path.string() + "'");
  out << text;
}

void note(std::ostream* log, const std::string& line) {
  if (log != nullptr) *log << line << std::endl;
}

FrozenChecksums checksums(const RestorationModel& teacher, const FeatureEncoder& encoder,
                          const Codebook& codebook) {
  return {teacher.extract_params().checksum(), encoder.checksum(), codebook.checksum()};
}

nlohmann::json to_json(const FrozenChecksums& c) {
  return {{"teacher", hex64(c.teacher)}, {"encoder", hex64(c.encoder)}, {"codebook", hex64(c.codebook)}};
}

nlohmann::json teacher_cache_key(const ExperimentConfig& c) {
  return {{"format", "teacher-v1"},
          {"architecture", to_json(c.teacher.architecture)},
          {"iterations", c.teacher.iterations},
          {"lr", c.teacher.lr},
          {"lr_decay", c.train.lr.decay},
          {"lr_milestones", c.train.lr.milestones},
          {"seed", c.teacher.seed},
          {"batch_size", c.train.batch_size},
          {"patch_size", c.train.patch_size},
          {"scale", c.scale},
          {"corpus_seed", c.data.corpus_seed},
          {"train_images", c.data.train_images},
          {"image_size", c.data.image_size}};
}

std::vector<MetricRow> evaluate_all(const RestorationModel& student,
                                    const RestorationModel& untrained,
                                    const RestorationModel& teacher,
                                    const std::vector<PairedSample>& heldout) {
  std::vector<MetricRow> rows;
  for (ChannelMode mode : {ChannelMode::y, ChannelMode::rgb}) {
    rows.push_back(evaluate_model("student", student, heldout, mode));
    rows.push_back(evaluate_model("untrained", untrained, heldout, mode));
    rows.push_back(evaluate_model("teacher", teacher, heldout, mode));
    rows.push_back(evaluate_bilinear(heldout, mode));
  }
  return rows;
}

}  // namespace

std::string library_version() { return DCKD_VERSION; }

fs::path runs_root() {
  const char* env = std::getenv("DCKD_RUNS_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

std::string digest_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return hex64(h);
}

nlohmann::json environment_info() {
  nlohmann::json env = {
      {"compiler", __VERSION__},
      {"cplusplus", static_cast<long>(__cplusplus)},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
#if defined(__AVX512F__)
      {"simd", "avx512"},
#elif defined(__AVX2__)
      {"simd", "avx2"},
#else
      {"simd", "baseline"},
#endif
#ifdef NDEBUG
      {"build", "release"},
#else
      {"build", "debug"},
#endif
  };
  env["digest"] = digest_hex(env.dump());
  return env;
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  ExperimentData data;
  for (const auto& gt : make_toy_corpus(config.data.corpus_seed, config.data.train_images,
                                        config.data.image_size)) {
    data.train.push_back(synth_pair(gt, config.scale));
  }
  for (const auto& gt : make_toy_corpus(config.data.heldout_seed, config.data.heldout_images,
                                        config.data.image_size)) {
    data.heldout.push_back(synth_pair(gt, config.scale));
  }
  return data;
}

RestorationModel initial_student(const TrainConfig& config) {
  Rng rng(config.seed);
  return RestorationModel(config.student, rng());
}

RestorationModel obtain_teacher(const ExperimentConfig& config, const ExperimentData& data,
                                std::ostream* log) {
  const auto& arch = config.teacher.architecture;
  if (!config.teacher.checkpoint.empty()) {
    Checkpoint ckpt = load_checkpoint(config.teacher.checkpoint);
    if (!(ckpt.model.spec() == arch)) {
      throw StructuralError("teacher checkpoint '" + config.teacher.checkpoint +
                            "' has architecture " + to_json(ckpt.model.spec()).dump() +
                            ", config expects " + to_json(arch).dump());
    }
    ckpt.model.freeze();
    return std::move(ckpt.model);
  }

  const nlohmann::json key = teacher_cache_key(config);
  const fs::path cache = runs_root() / ".teacher-cache" / (digest_hex(key.dump()) + ".ckpt");
  if (fs::exists(cache)) {
    Checkpoint ckpt = load_checkpoint(cache);
    if (ckpt.meta.extra.value("cache_key", nlohmann::json()) == key && ckpt.model.spec() == arch) {
      note(log, "teacher: cached " + cache.string());
      ckpt.model.freeze();
      return std::move(ckpt.model);
    }
  }
  note(log, "teacher: pretraining " + std::to_string(config.teacher.iterations) + " iterations");
  const LrSchedule lr{config.teacher.lr, config.train.lr.decay, config.train.lr.milestones};
  RestorationModel teacher =
      pretrain_teacher(arch, data.train, config.teacher.iterations, config.train.batch_size,
                       config.train.patch_size, lr, config.teacher.seed);
  fs::create_directories(cache.parent_path());
  const fs::path tmp = cache.string() + ".tmp" + std::to_string(Clock::now().time_since_epoch().count());
  save_checkpoint(tmp, teacher, {config.teacher.iterations, config.teacher.seed, {{"cache_key", key}}});
  fs::rename(tmp, cache);
  return teacher;
}

FeatureEncoder obtain_encoder(const ExperimentConfig& config) {
  FeatureEncoder encoder = config.encoder_weights.empty()
                               ? FeatureEncoder(config.encoder)
                               : load_external_encoder(config.encoder_weights);
  const int gt_patch = config.train.patch_size * config.scale;
  if (gt_patch % encoder.required_multiple() != 0) {
    throw ConfigError("train.patch_size * task.scale = " + std::to_string(gt_patch) +
                      " must be a multiple of " + std::to_string(encoder.required_multiple()) +
                      " for a " + std::to_string(encoder.levels()) + "-level encoder");
  }
  return encoder;
}

Codebook obtain_codebook(const ExperimentConfig& config, const FeatureEncoder& encoder) {
  if (!config.codebook.path.empty()) {
    Codebook cb = load_codebook(config.codebook.path);
    if (cb.dim() != encoder.embedding_dim()) {
      throw StructuralError("codebook '" + config.codebook.path + "' has dimension " +
                            std::to_string(cb.dim()) + ", encoder embeds " +
                            std::to_string(encoder.embedding_dim()));
    }
    return cb;
  }
  const std::vector<Image> images =
      make_toy_corpus(config.codebook.corpus_seed, config.codebook.images, config.data.image_size);
  return build_codebook(encoder, images, config.codebook.size, config.codebook.seed);
}

MetricRow evaluate_model(const std::string& method, const RestorationModel& model,
                         const std::vector<PairedSample>& heldout, ChannelMode mode) {
  if (heldout.empty()) throw ParameterError("evaluation set is empty");
  MetricRow row{method, mode, 0.0, 0.0, model.parameter_count()};
  for (const auto& s : heldout) {
    const MetricResult m = evaluate(clamp01(model.forward(s.lq)), s.gt, mode);
    row.psnr_db += m.reported_psnr();
    row.ssim += m.ssim;
  }
  row.psnr_db /= static_cast<double>(heldout.size());
  row.ssim /= static_cast<double>(heldout.size());
  return row;
}

MetricRow evaluate_bilinear(const std::vector<PairedSample>& heldout, ChannelMode mode) {
  if (heldout.empty()) throw ParameterError("evaluation set is empty");
  MetricRow row{"bilinear", mode, 0.0, 0.0, 0};
  for (const auto& s : heldout) {
    const Image up = resize_bilinear(s.lq, s.gt.height(), s.gt.width());
    const MetricResult m = evaluate(clamp01(up), s.gt, mode);
    row.psnr_db += m.reported_psnr();
    row.ssim += m.ssim;
  }
  row.psnr_db /= static_cast<double>(heldout.size());
  row.ssim /= static_cast<double>(heldout.size());
  return row;
}

std::string format_metric_row(const MetricRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ",%s,%.17g,%.17g,%zu", to_string(row.mode).c_str(), row.psnr_db,
                row.ssim, row.params);
  return csv_field(row.method) + buf;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::string text = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows) text += format_metric_row(r) + "\n";
  write_text(path, text);
}

const MetricRow& RunResult::metric(const std::string& method) const {
  return metric(method, eval_channel);
}

const MetricRow& RunResult::metric(const std::string& method, ChannelMode mode) const {
  for (const auto& r : metrics) {
    if (r.method == method && r.mode == mode) return r;
  }
  throw ParameterError("no metric row for '" + method + "' in " + to_string(mode));
}

std::string default_run_name(const ExperimentConfig& config, const std::string& digest) {
  return config.name + "-" + digest.substr(0, 8);
}

RunResult run_experiment(const ConfigDocument& doc, const fs::path& out_dir, std::ostream* log) {
  const ExperimentConfig cfg = experiment_from_document(doc);
  const ConfigDocument resolved = resolve_document(doc);
  const std::string canonical = resolved.to_text();

  RunResult result;
  result.config_digest = digest_hex(canonical);
  result.seed = cfg.train.seed;
  result.eval_channel = cfg.eval_channel;
  result.run_dir = out_dir.empty() ? runs_root() / default_run_name(cfg, result.config_digest) : out_dir;
  fs::create_directories(result.run_dir);
  write_text(result.run_dir / "config.toml", canonical);
  note(log, "run: " + result.run_dir.string() + " (config " + result.config_digest + ", seed " +
                std::to_string(cfg.train.seed) + ")");

  const auto t_data = Clock::now();
  const ExperimentData data = prepare_data(cfg);
  const double data_s = seconds_since(t_data);

  const auto t_teacher = Clock::now();
  const RestorationModel teacher = obtain_teacher(cfg, data, log);
  const double teacher_s = seconds_since(t_teacher);
  const FeatureEncoder encoder = obtain_encoder(cfg);
  const Codebook codebook = obtain_codebook(cfg, encoder);
  result.frozen_before = checksums(teacher, encoder, codebook);

  DistillContext context{&teacher, nullptr, &encoder, &codebook};
  note(log, "train: " + std::to_string(cfg.train.iterations) + " iterations");
  const auto t_train = Clock::now();
  TrainResult trained = train(cfg.train, data.train, context, result.run_dir);
  result.train_seconds = seconds_since(t_train);

  result.frozen_after = checksums(teacher, encoder, codebook);
  if (!(result.frozen_before == result.frozen_after)) {
    throw StructuralError("frozen teacher/encoder/codebook parameters changed during training");
  }
  result.ema_refreshes = trained.ema_refreshes;
  for (const auto& row : trained.log) result.total_loss.push_back(row.report.total);
  result.student_checksum = trained.student.extract_params().checksum();

  const auto t_eval = Clock::now();
  const RestorationModel untrained = initial_student(cfg.train);
  result.metrics = evaluate_all(trained.student, untrained, teacher, data.heldout);
  const double eval_s = seconds_since(t_eval);

  save_checkpoint(result.run_dir / "teacher.ckpt", teacher,
                  {cfg.teacher.iterations, cfg.teacher.seed, {{"role", "teacher"}}});
  write_metrics_csv(result.run_dir / "metrics.csv", result.metrics);

  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& r : result.metrics) {
    metrics.push_back({{"method", r.method}, {"channel_mode", to_string(r.mode)},
                       {"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"params", r.params}});
  }
  nlohmann::json manifest = {
      {"schema", "dckd-run/1"},
      {"name", cfg.name},
      {"version", library_version()},
      {"git", DCKD_GIT_REV},
      {"seed", cfg.train.seed},
      {"config_digest", result.config_digest},
      {"config", canonical},
      {"config_values", resolved.values()},
      {"environment", environment_info()},
      {"checksums",
       {{"before", to_json(result.frozen_before)},
        {"after", to_json(result.frozen_after)},
        {"student", hex64(result.student_checksum)}}},
      {"parameter_counts", {{"student", trained.student.parameter_count()},
                            {"teacher", teacher.parameter_count()}}},
      {"teacher_source", cfg.teacher.checkpoint.empty() ? "pretrained (cached)" : cfg.teacher.checkpoint},
      {"ema_refreshes", result.ema_refreshes},
      {"eval_channel", to_string(cfg.eval_channel)},
      {"metrics", metrics},
      {"files", {{"loss", "loss.csv"}, {"metrics", "metrics.csv"}, {"student", "student.ckpt"},
                 {"teacher", "teacher.ckpt"}, {"config", "config.toml"}}},
      {"timings_s", {{"data", data_s}, {"teacher", teacher_s}, {"train", result.train_seconds},
                     {"eval", eval_s}}},
  };
  write_text(result.run_dir / "manifest.json", manifest.dump(2) + "\n");

  const MetricRow& s = result.metric("student");
  note(log, "done: student " + format_psnr_ssim(s.psnr_db, s.ssim) + " (" + to_string(s.mode) +
                ") in " + std::to_string(result.train_seconds) + " s");
  return result;
}

std::vector<MetricRow> evaluate_checkpoint(const fs::path& checkpoint, const ConfigDocument& doc) {
  const ExperimentConfig cfg = experiment_from_document(doc);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.model.spec().upscale != cfg.scale) {
    throw StructuralError("checkpoint upscale " + std::to_string(ckpt.model.spec().upscale) +
                          " does not match task.scale " + std::to_string(cfg.scale));
  }
  const ExperimentData data = prepare_data(cfg);
  std::vector<MetricRow> rows;
  for (ChannelMode mode : {ChannelMode::y, ChannelMode::rgb}) {
    rows.push_back(evaluate_model(checkpoint.stem().string(), ckpt.model, data.heldout, mode));
    rows.push_back(evaluate_bilinear(data.heldout, mode));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Grids

ExperimentGrid ExperimentGrid::load(const fs::path& path) {
  return from_document(ConfigDocument::load(path));
}

ExperimentGrid ExperimentGrid::from_document(const ConfigDocument& doc) {
  static const std::set<std::string> kGridKeys = {"grid.name", "grid.base", "grid.seeds",
                                                  "grid.layout", "grid.overrides"};
  static const std::set<std::string> kAxisKeys = {"key", "values", "labels", "title"};
  for (const auto& [key, value] : doc.values()) {
    if (!kGridKeys.count(key)) throw ConfigError("unknown grid key '" + key + "'");
  }
  ExperimentGrid g;
  if (!doc.contains("grid.name") || !doc.contains("grid.base")) {
    throw ConfigError("grid needs grid.name and grid.base");
  }
  g.name = doc.get_string("grid.name");
  g.base_config = doc.resolve_path(doc.get_string("grid.base"));
  if (doc.contains("grid.seeds")) {
    g.seeds.clear();
    for (int s : doc.get_int_list("grid.seeds")) {
      if (s < 0) throw ConfigError("grid.seeds must be non-negative");
      g.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (doc.contains("grid.layout")) g.layout = doc.get_string("grid.layout");
  if (doc.contains("grid.overrides")) g.overrides = doc.get_string_list("grid.overrides");

  for (const auto& table : doc.array_tables("axis")) {
    for (const auto& [key, value] : table) {
      if (!kAxisKeys.count(key)) throw ConfigError("unknown axis key '" + key + "'");
    }
    if (!table.count("key") || !table.count("values")) {
      throw ConfigError("every [[axis]] needs key and values");
    }
    GridAxis axis;
    axis.key = decode_string_literal(table.at("key"));
    axis.values = split_list_literal(table.at("values"));
    if (table.count("labels")) {
      for (const auto& l : split_list_literal(table.at("labels"))) {
        axis.labels.push_back(decode_string_literal(l));
      }
    } else {
      for (const auto& v : axis.values) axis.labels.push_back(decode_string_literal(v));
    }
    axis.title = table.count("title") ? decode_string_literal(table.at("title")) : axis.key;
    g.axes.push_back(std::move(axis));
  }
  g.validate();
  return g;
}

void ExperimentGrid::validate() const {
  if (name.empty()) throw ConfigError("grid.name must not be empty");
  if (seeds.empty()) throw ConfigError("grid.seeds must not be empty");
  const ConfigDocument defaults = default_document();
  std::set<std::string> keys;
  for (const auto& a : axes) {
    if (!defaults.contains(a.key)) throw ConfigError("axis key '" + a.key + "' is not a config key");
    if (a.key == "run.seed") throw ConfigError("use grid.seeds instead of a run.seed axis");
    if (!keys.insert(a.key).second) throw ConfigError("axis key '" + a.key + "' repeated");
    if (a.values.empty()) throw ConfigError("axis '" + a.key + "' has no values");
    if (a.labels.size() != a.values.size()) {
      throw ConfigError("axis '" + a.key + "' has " + std::to_string(a.values.size()) +
                        " values but " + std::to_string(a.labels.size()) + " labels");
    }
  }
  if (layout == "columns") {
    if (axes.size() != 1) throw ConfigError("layout 'columns' needs exactly one axis");
  } else if (layout == "matrix") {
    if (axes.size() != 2) throw ConfigError("layout 'matrix' needs exactly two axes");
  } else if (layout != "rows") {
    throw ConfigError("grid.layout must be rows, columns or matrix (got '" + layout + "')");
  }
}

std::vector<GridCell> expand_grid(const ExperimentGrid& grid) {
  grid.validate();
  std::vector<GridCell> cells;
  std::vector<std::size_t> idx(grid.axes.size(), 0);
  while (true) {
    for (std::uint64_t seed : grid.seeds) {
      GridCell cell;
      cell.index = cells.size();
      cell.value_index = idx;
      cell.seed = seed;
      cell.assignments = grid.overrides;
      for (std::size_t a = 0; a < grid.axes.size(); ++a) {
        const auto& axis = grid.axes[a];
        cell.assignments.push_back(axis.key + "=" + axis.values[idx[a]]);
        if (!cell.label.empty()) cell.label += ", ";
        cell.label += axis.title + "=" + axis.labels[idx[a]];
      }
      cell.assignments.push_back("run.seed=" + std::to_string(seed));
      if (grid.seeds.size() > 1 || cell.label.empty()) {
        cell.label += (cell.label.empty() ? "" : ", ") + std::string("seed=") + std::to_string(seed);
      }
      cells.push_back(std::move(cell));
    }
    // odometer, last axis fastest
    std::size_t a = grid.axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < grid.axes[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return cells;
    }
    if (grid.axes.empty()) return cells;
  }
}

std::size_t AblationResult::failures() const {
  return static_cast<std::size_t>(
      std::count_if(cells.begin(), cells.end(), [](const CellOutcome& c) { return !c.ok; }));
}

namespace {

struct CellScore {
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
};

/// Mean over seeds for every combination of axis values.
std::map<std::vector<std::size_t>, CellScore> aggregate(const std::vector<CellOutcome>& cells) {
  std::map<std::vector<std::size_t>, std::pair<CellScore, int>> acc;
  for (const auto& c : cells) {
    auto& [score, n] = acc[c.cell.value_index];
    if (!c.ok) continue;
    const MetricRow& m = c.result->metric("student");
    if (n == 0) score = {0.0, 0.0};
    score.psnr += m.psnr_db;
    score.ssim += m.ssim;
    ++n;
  }
  std::map<std::vector<std::size_t>, CellScore> out;
  for (auto& [k, v] : acc) {
    CellScore s = v.first;
    if (v.second > 0) {
      s.psnr /= v.second;
      s.ssim /= v.second;
    }
    out[k] = s;
  }
  return out;
}

std::string render_ablation_table(const ExperimentGrid& grid, const std::vector<CellOutcome>& cells,
                                  const std::string& mode) {
  const auto scores = aggregate(cells);
  const std::string metric_title = "PSNR/SSIM (" + mode + ")";
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  if (grid.layout == "columns") {
    const auto& axis = grid.axes[0];
    header.push_back(axis.title);
    std::vector<std::string> row{metric_title};
    for (std::size_t i = 0; i < axis.values.size(); ++i) {
      header.push_back(axis.labels[i]);
      const CellScore& s = scores.at({i});
      row.push_back(format_psnr_ssim(s.psnr, s.ssim));
    }
    rows.push_back(row);
  } else if (grid.layout == "matrix") {
    const auto& ra = grid.axes[0];
    const auto& ca = grid.axes[1];
    header.push_back(ra.title + " \\ " + ca.title);
    for (const auto& l : ca.labels) header.push_back(l);
    for (std::size_t i = 0; i < ra.values.size(); ++i) {
      std::vector<std::string> row{ra.labels[i]};
      for (std::size_t j = 0; j < ca.values.size(); ++j) {
        const CellScore& s = scores.at({i, j});
        row.push_back(format_psnr_ssim(s.psnr, s.ssim));
      }
      rows.push_back(row);
    }
  } else {
    for (const auto& a : grid.axes) header.push_back(a.title);
    header.push_back(metric_title);
    for (const auto& [idx, s] : scores) {
      std::vector<std::string> row;
      for (std::size_t a = 0; a < idx.size(); ++a) row.push_back(grid.axes[a].labels[idx[a]]);
      row.push_back(format_psnr_ssim(s.psnr, s.ssim));
      rows.push_back(row);
    }
  }
  std::string seeds;
  for (auto s : grid.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  return grid.name + " (student on held-out toy set; mean over seeds " + seeds + ")\n" +
         render_text_table(header, rows);
}

LinePlot ablation_plot(const ExperimentGrid& grid, const std::vector<CellOutcome>& cells,
                       const std::string& mode) {
  const auto scores = aggregate(cells);
  LinePlot plot;
  plot.title = grid.name;
  plot.y_label = "PSNR (" + mode + ", dB)";
  if (grid.axes.empty()) {
    plot.x_ticks = {"base"};
    plot.series.push_back({"student", {scores.begin()->second.psnr}});
    return plot;
  }
  const auto& x = grid.axes[0];
  plot.x_label = x.title;
  plot.x_ticks = x.labels;
  if (grid.axes.size() == 1) {
    PlotSeries s{"student", {}};
    for (std::size_t i = 0; i < x.values.size(); ++i) s.values.push_back(scores.at({i}).psnr);
    plot.series.push_back(s);
    return plot;
  }
  // Further axes become one series per combination.
  std::map<std::vector<std::size_t>, PlotSeries> series;
  for (const auto& [idx, score] : scores) {
    const std::vector<std::size_t> rest(idx.begin() + 1, idx.end());
    auto& s = series[rest];
    if (s.values.empty()) {
      for (std::size_t a = 1; a < idx.size(); ++a) {
        s.name += (a > 1 ? ", " : "") + grid.axes[a].title + "=" + grid.axes[a].labels[idx[a]];
      }
      s.values.assign(x.values.size(), std::numeric_limits<double>::quiet_NaN());
    }
    s.values[idx[0]] = score.psnr;
  }
  for (auto& [k, s] : series) plot.series.push_back(std::move(s));
  return plot;
}

}  // namespace

AblationResult run_ablation(const ExperimentGrid& grid, const fs::path& out_dir, std::ostream* log) {
  AblationResult res;
  res.grid = grid;
  res.out_dir = out_dir.empty() ? runs_root() / ("ablate-" + grid.name) : out_dir;
  const std::vector<GridCell> cells = expand_grid(grid);
  fs::create_directories(res.out_dir);

  nlohmann::json plan = {{"schema", "dckd-grid/1"},
                         {"name", grid.name},
                         {"base", grid.base_config.string()},
                         {"layout", grid.layout},
                         {"seeds", grid.seeds},
                         {"cells", nlohmann::json::array()}};
  note(log, "grid " + grid.name + ": " + std::to_string(cells.size()) + " cells");
  for (const auto& c : cells) {
    note(log, "  cell " + std::to_string(c.index) + ": " + c.label);
    plan["cells"].push_back({{"index", c.index}, {"label", c.label}, {"seed", c.seed},
                             {"assignments", c.assignments}});
  }
  write_text(res.out_dir / "grid.json", plan.dump(2) + "\n");

  std::string mode = "Y";
  for (const auto& cell : cells) {
    CellOutcome outcome{cell, false, {}, std::nullopt};
    char dir[32];
    std::snprintf(dir, sizeof dir, "cell_%03zu", cell.index);
    try {
      ConfigDocument doc = ConfigDocument::load(grid.base_config);
      for (const auto& a : cell.assignments) doc.apply_override(a);
      outcome.result = run_experiment(doc, res.out_dir / dir, nullptr);
      outcome.ok = true;
      mode = to_string(outcome.result->eval_channel);
      const MetricRow& m = outcome.result->metric("student");
      note(log, "  cell " + std::to_string(cell.index) + " ok: " + format_psnr_ssim(m.psnr_db, m.ssim));
    } catch (const std::exception& e) {
      outcome.error = e.what();
      note(log, "  cell " + std::to_string(cell.index) + " FAILED: " + outcome.error);
    }
    res.cells.push_back(std::move(outcome));
  }

  std::string csv = "cell,seed,label";
  for (const auto& a : grid.axes) csv += "," + csv_field(a.key);
  csv += ",status,psnr_db,ssim,channel_mode,config_digest,run_dir,error\n";
  for (const auto& c : res.cells) {
    csv += std::to_string(c.cell.index) + "," + std::to_string(c.cell.seed) + "," + csv_field(c.cell.label);
    for (std::size_t a = 0; a < grid.axes.size(); ++a) {
      csv += "," + csv_field(decode_string_literal(grid.axes[a].values[c.cell.value_index[a]]));
    }
    if (c.ok) {
      const MetricRow& m = c.result->metric("student");
      char buf[96];
      std::snprintf(buf, sizeof buf, ",ok,%.17g,%.17g,%s,", m.psnr_db, m.ssim, to_string(m.mode).c_str());
      csv += buf + c.result->config_digest + "," + csv_field(c.result->run_dir.string()) + ",\n";
    } else {
      csv += ",failed,,,,,," + csv_field(c.error) + "\n";
    }
  }
  write_text(res.out_dir / "results.csv", csv);
  res.table = render_ablation_table(grid, res.cells, mode);
  write_text(res.out_dir / "table.txt", res.table);
  write_text(res.out_dir / "plot.svg", render_svg(ablation_plot(grid, res.cells, mode)));
  return res;
}

CompareResult run_compare(const std::vector<fs::path>& configs,
                          const std::vector<std::string>& overrides, const fs::path& out_dir,
                          std::ostream* log) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configs");
  CompareResult res;
  const fs::path root = out_dir.empty() ? runs_root() / "compare" : out_dir;
  std::string shared_seed;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    ConfigDocument doc = ConfigDocument::load(configs[i]);
    for (const auto& o : overrides) doc.apply_override(o);
    if (i == 0) {
      shared_seed = std::to_string(experiment_from_document(doc).train.seed);
    }
    doc.set("run.seed", shared_seed);
    std::string name = configs[i].stem().string();
    if (std::find(res.names.begin(), res.names.end(), name) != res.names.end()) {
      name += "_" + std::to_string(i);
    }
    res.names.push_back(name);
    res.runs.push_back(run_experiment(doc, root / name, log));
  }

  const MetricRow& ref = res.runs.front().metric("student");
  const std::string mode = to_string(res.runs.front().eval_channel);
  std::vector<std::vector<std::string>> rows;
  std::string csv = "method,student_params,teacher_params,psnr_db,ssim,delta_psnr_db,delta_ssim,config_digest,seed\n";
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    const RunResult& r = res.runs[i];
    const MetricRow& m = r.metric("student");
    const std::size_t tp = r.metric("teacher").params;
    char dp[32], ds[32];
    std::snprintf(dp, sizeof dp, "%+.2f", m.psnr_db - ref.psnr_db);
    std::snprintf(ds, sizeof ds, "%+.4f", m.ssim - ref.ssim);
    rows.push_back({res.names[i], std::to_string(m.params), std::to_string(tp),
                    format_psnr_ssim(m.psnr_db, m.ssim), dp, ds});
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%zu,%zu,%.17g,%.17g,%.17g,%.17g,", m.params, tp, m.psnr_db, m.ssim,
                  m.psnr_db - ref.psnr_db, m.ssim - ref.ssim);
    csv += csv_field(res.names[i]) + buf + r.config_digest + "," + std::to_string(r.seed) + "\n";
  }
  const MetricRow& t = res.runs.front().metric("teacher");
  rows.push_back({"teacher (reference)", "-", std::to_string(t.params),
                  format_psnr_ssim(t.psnr_db, t.ssim), "", ""});
  res.table = "compare (held-out toy set, seed " + shared_seed + ")\n" +
              render_text_table({"method", "student params", "teacher params",
                                 "PSNR/SSIM (" + mode + ")", "dPSNR", "dSSIM"},
                                rows);
  fs::create_directories(root);
  write_text(root / "compare.csv", csv);
  write_text(root / "table.txt", res.table);
  return res;
}

}  // namespace dckd
