#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dckd/encoder.hpp"
#include "dckd/metrics.hpp"
#include "dckd/trainer.hpp"

namespace dckd {

/// A small TOML subset: `[section]` and `[[array.of.tables]]` headers,
/// `key = value` pairs whose value is a string, number, boolean, or a one-line
/// array of those, and `#` comments. Keys are flattened to `section.key`.
/// Values are kept as their literal text and decoded by the typed getters.
class ConfigDocument {
 public:
  using Table = std::map<std::string, std::string>;

  static ConfigDocument parse(std::string_view text, const std::string& origin = "<string>");
  static ConfigDocument load(const std::filesystem::path& path);

  /// `literal` is a TOML literal, or a bare word which is taken as a string.
  void set(const std::string& key, const std::string& literal);
  /// "key=value" as given on the command line.
  void apply_override(const std::string& assignment);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const Table& values() const noexcept { return values_; }
  const std::vector<Table>& array_tables(const std::string& name) const;

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  /// Canonical text: keys grouped by section in sorted order. Parsing it back
  /// yields the same values.
  std::string to_text() const;

  /// Directory used to resolve relative paths (the config file's directory).
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }
  void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }
  std::filesystem::path resolve_path(const std::string& value) const;

 private:
  const std::string& literal(const std::string& key) const;

  Table values_;
  std::map<std::string, std::vector<Table>> array_tables_;
  std::filesystem::path base_dir_;
};

/// Splits a literal list "[a, b]" into element literals; a scalar literal becomes a one-item list.
std::vector<std::string> split_list_literal(const std::string& literal);
/// Decodes a string literal ("x", 'x', or bare x).
std::string decode_string_literal(const std::string& literal);

struct DataConfig {
  std::uint64_t corpus_seed = 1;
  int train_images = 32;
  int image_size = 64;
  std::uint64_t heldout_seed = 2;
  int heldout_images = 8;
};

struct TeacherConfig {
  ArchitectureSpec architecture = teacher_architecture(2);
  long iterations = 3000;
  double lr = 2e-3;
  std::uint64_t seed = 11;
  std::string checkpoint;  // resolved path; empty = pretrain (cached)
};

struct CodebookConfig {
  std::string path;  // resolved; empty = k-means at startup
  int size = 32;
  std::uint64_t seed = 0;
  std::uint64_t corpus_seed = 3;  // k-means runs on its own synthetic set
  int images = 16;
};

/// Everything one `run` needs, decoded and validated.
struct ExperimentConfig {
  std::string name = "run";
  int scale = 2;
  ChannelMode eval_channel = ChannelMode::y;
  DataConfig data;
  TrainConfig train;
  TeacherConfig teacher;
  EncoderConfig encoder;
  std::string encoder_weights;  // resolved path; empty = built-in seeded encoder
  CodebookConfig codebook;
};

/// Document holding every known key at its default value.
ConfigDocument default_document();

/// Merges `doc` over the defaults. Unknown keys and malformed values raise
/// ConfigError listing the offending keys.
ConfigDocument resolve_document(const ConfigDocument& doc);
ExperimentConfig experiment_from_document(const ConfigDocument& doc);

}  // namespace dckd
