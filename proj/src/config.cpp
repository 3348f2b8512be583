#include "dckd/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote) {
      if (c == '\\' && quote == '"') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return std::string(line.substr(0, i));
    }
  }
  return std::string(line);
}

bool valid_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
      return false;
    }
  }
  return true;
}

bool is_quoted(const std::string& lit) {
  return lit.size() >= 2 && ((lit.front() == '"' && lit.back() == '"') ||
                             (lit.front() == '\'' && lit.back() == '\''));
}

bool parse_double(const std::string& lit, double& out) {
  if (lit.empty()) return false;
  char* end = nullptr;
  out = std::strtod(lit.c_str(), &end);
  return end == lit.c_str() + lit.size();
}

bool parse_long(const std::string& lit, long& out) {
  const char* b = lit.data();
  const char* e = lit.data() + lit.size();
  if (b != e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

bool is_scalar_literal(const std::string& lit) {
  double d;
  return is_quoted(lit) || lit == "true" || lit == "false" || parse_double(lit, d);
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

/// Well-formed literal check; returns a canonical literal or throws.
std::string normalize_literal(const std::string& raw, bool bare_is_string,
                              const std::string& where) {
  const std::string lit = trim(raw);
  if (lit.empty()) throw ConfigError(where + ": missing value");
  if (lit.front() == '[') {
    if (lit.back() != ']') throw ConfigError(where + ": unterminated array");
    std::string out = "[";
    const auto items = split_list_literal(lit);
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out += ", ";
      out += normalize_literal(items[i], bare_is_string, where);
    }
    return out + "]";
  }
  if (lit.front() == '"' || lit.front() == '\'') {
    if (!is_quoted(lit)) throw ConfigError(where + ": unterminated string");
    return quote(decode_string_literal(lit));
  }
  if (is_scalar_literal(lit)) return lit;
  if (bare_is_string) return quote(lit);
  throw ConfigError(where + ": cannot parse value '" + lit + "'");
}

}  // namespace

std::vector<std::string> split_list_literal(const std::string& literal) {
  const std::string lit = trim(literal);
  if (lit.empty() || lit.front() != '[') return {lit};
  if (lit.back() != ']') throw ConfigError("unterminated array literal '" + lit + "'");
  std::vector<std::string> items;
  std::string current;
  char quote_char = 0;
  for (std::size_t i = 1; i + 1 < lit.size(); ++i) {
    const char c = lit[i];
    if (quote_char) {
      current += c;
      if (c == '\\' && quote_char == '"' && i + 2 < lit.size()) {
        current += lit[++i];
      } else if (c == quote_char) {
        quote_char = 0;
      }
    } else if (c == '"' || c == '\'') {
      quote_char = c;
      current += c;
    } else if (c == ',') {
      items.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!trim(current).empty()) items.push_back(trim(current));
  for (const auto& item : items) {
    if (item.empty()) throw ConfigError("empty element in array literal '" + lit + "'");
  }
  return items;
}

std::string decode_string_literal(const std::string& literal) {
  const std::string lit = trim(literal);
  if (lit.size() >= 2 && lit.front() == '\'' && lit.back() == '\'') {
    return lit.substr(1, lit.size() - 2);
  }
  if (lit.size() >= 2 && lit.front() == '"' && lit.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < lit.size(); ++i) {
      if (lit[i] == '\\' && i + 2 < lit.size()) {
        const char n = lit[++i];
        out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
      } else {
        out += lit[i];
      }
    }
    return out;
  }
  return lit;
}

ConfigDocument ConfigDocument::parse(std::string_view text, const std::string& origin) {
  ConfigDocument doc;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::string section;
  Table* current_table = nullptr;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.rfind("[[", 0) == 0) {
      if (line.size() < 4 || line.substr(line.size() - 2) != "]]") {
        throw ConfigError(where + ": malformed array-of-tables header");
      }
      const std::string name = trim(line.substr(2, line.size() - 4));
      if (!valid_key(name)) throw ConfigError(where + ": invalid table name '" + name + "'");
      auto& tables = doc.array_tables_[name];
      tables.emplace_back();
      current_table = &tables.back();
      section.clear();
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section)) throw ConfigError(where + ": invalid section name '" + section + "'");
      current_table = nullptr;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (is_quoted(key)) key = decode_string_literal(key);
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    const std::string value = normalize_literal(line.substr(eq + 1), false, where);
    if (current_table != nullptr) {
      (*current_table)[key] = value;
    } else {
      const std::string full = section.empty() ? key : section + "." + key;
      if (doc.values_.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
      doc.values_[full] = value;
    }
  }
  return doc;
}

ConfigDocument ConfigDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ConfigDocument doc = parse(ss.str(), path.string());
  doc.base_dir_ = std::filesystem::absolute(path).parent_path();
  return doc;
}

void ConfigDocument::set(const std::string& key, const std::string& literal) {
  if (!valid_key(key)) throw ConfigError("invalid key '" + key + "'");
  values_[key] = normalize_literal(literal, true, key);
}

void ConfigDocument::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::vector<ConfigDocument::Table>& ConfigDocument::array_tables(
    const std::string& name) const {
  static const std::vector<Table> empty;
  const auto it = array_tables_.find(name);
  return it == array_tables_.end() ? empty : it->second;
}

const std::string& ConfigDocument::literal(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

std::string ConfigDocument::get_string(const std::string& key) const {
  const std::string& lit = literal(key);
  if (!is_quoted(lit)) throw ConfigError(key + ": expected a string, got " + lit);
  return decode_string_literal(lit);
}

double ConfigDocument::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(literal(key), v)) throw ConfigError(key + ": expected a number, got " + literal(key));
  return v;
}

long ConfigDocument::get_int(const std::string& key) const {
  long v = 0;
  if (!parse_long(literal(key), v)) {
    throw ConfigError(key + ": expected an integer, got " + literal(key));
  }
  return v;
}

bool ConfigDocument::get_bool(const std::string& key) const {
  const std::string& lit = literal(key);
  if (lit == "true") return true;
  if (lit == "false") return false;
  throw ConfigError(key + ": expected true or false, got " + lit);
}

std::vector<double> ConfigDocument::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list_literal(literal(key))) {
    double v = 0.0;
    if (!parse_double(item, v)) throw ConfigError(key + ": expected a list of numbers");
    out.push_back(v);
  }
  return out;
}

std::vector<int> ConfigDocument::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list_literal(literal(key))) {
    long v = 0;
    if (!parse_long(item, v)) throw ConfigError(key + ": expected a list of integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::string> ConfigDocument::get_string_list(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& item : split_list_literal(literal(key))) out.push_back(decode_string_literal(item));
  return out;
}

std::string ConfigDocument::to_text() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      sections[""].emplace_back(key, value);
    } else {
      sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), value);
    }
  }
  std::string out;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) out += (out.empty() ? "[" : "\n[") + name + "]\n";
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  }
  for (const auto& [name, tables] : array_tables_) {
    for (const auto& t : tables) {
      out += "\n[[" + name + "]]\n";
      for (const auto& [k, v] : t) out += k + " = " + v + "\n";
    }
  }
  return out;
}

std::filesystem::path ConfigDocument::resolve_path(const std::string& value) const {
  if (value.empty()) return {};
  std::filesystem::path p(value);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

ConfigDocument default_document() {
  static const char* kDefaults = R"(
[run]
name = "run"
seed = 0

[task]
scale = 2
eval_channel = "Y"

[data]
corpus_seed = 1
train_images = 32
image_size = 64
heldout_seed = 2
heldout_images = 8

[train]
iterations = 5000
batch_size = 8
patch_size = 16
lr = 0.001
lr_decay = 0.5
lr_milestones = [0.6, 0.8]
adam_beta1 = 0.9
adam_beta2 = 0.99
adam_eps = 1e-8
checkpoint_every = 0

[student]
width = 8
depth = 2

[teacher]
width = 32
depth = 4
iterations = 3000
lr = 0.002
seed = 11
checkpoint = ""

[loss]
lambda_kd = 1.0
lambda_dcl = 0.1
lambda_ce = 0.001

[dcr]
alpha = 0.1
num_negatives = 5
initial_step = 1000
step_growth = 2.0
step_cap = 0
eps = 1e-8
degradation_policy = "noise"

[degradation]
blur_sigma_min = 0.5
blur_sigma_max = 2.0
noise_sigma_min = 0.0196078431372549
noise_sigma_max = 0.11764705882352941
resize_scale_min = 0.5
resize_scale_max = 0.9

[dmm]
temperature = 1.0
distance_sign = "negated"
codebook_path = ""
codebook_size = 32
codebook_seed = 0
codebook_corpus_seed = 3
codebook_images = 16

[encoder]
weights_path = ""
channels = [8, 16, 32, 32, 32]
level_weights = [0.03125, 0.0625, 0.125, 0.25, 1.0]
seed = 0
)";
  return ConfigDocument::parse(kDefaults, "<defaults>");
}

ConfigDocument resolve_document(const ConfigDocument& doc) {
  ConfigDocument resolved = default_document();
  std::string unknown;
  for (const auto& [key, value] : doc.values()) {
    if (!resolved.contains(key)) {
      unknown += (unknown.empty() ? "" : ", ") + key;
      continue;
    }
    resolved.set(key, value);
  }
  if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
  resolved.set_base_dir(doc.base_dir());
  return resolved;
}

ExperimentConfig experiment_from_document(const ConfigDocument& input) {
  const ConfigDocument d = resolve_document(input);
  ExperimentConfig c;
  std::vector<std::string> errors;
  auto field = [&](const char* key, auto&& assign) {
    try {
      assign(key);
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      errors.push_back(msg.rfind(key, 0) == 0 ? msg : std::string(key) + ": " + msg);
    }
  };
  auto u64 = [&](const char* key) {
    const long v = d.get_int(key);
    if (v < 0) throw ConfigError(std::string(key) + ": must be >= 0");
    return static_cast<std::uint64_t>(v);
  };

  field("run.name", [&](auto k) { c.name = d.get_string(k); });
  field("run.seed", [&](auto k) { c.train.seed = u64(k); });
  field("task.scale", [&](auto k) { c.scale = static_cast<int>(d.get_int(k)); });
  field("task.eval_channel", [&](auto k) { c.eval_channel = parse_channel_mode(d.get_string(k)); });

  field("data.corpus_seed", [&](auto k) { c.data.corpus_seed = u64(k); });
  field("data.train_images", [&](auto k) { c.data.train_images = static_cast<int>(d.get_int(k)); });
  field("data.image_size", [&](auto k) { c.data.image_size = static_cast<int>(d.get_int(k)); });
  field("data.heldout_seed", [&](auto k) { c.data.heldout_seed = u64(k); });
  field("data.heldout_images", [&](auto k) { c.data.heldout_images = static_cast<int>(d.get_int(k)); });

  field("train.iterations", [&](auto k) { c.train.iterations = d.get_int(k); });
  field("train.batch_size", [&](auto k) { c.train.batch_size = static_cast<int>(d.get_int(k)); });
  field("train.patch_size", [&](auto k) { c.train.patch_size = static_cast<int>(d.get_int(k)); });
  field("train.lr", [&](auto k) { c.train.lr.initial = d.get_double(k); });
  field("train.lr_decay", [&](auto k) { c.train.lr.decay = d.get_double(k); });
  field("train.lr_milestones", [&](auto k) { c.train.lr.milestones = d.get_double_list(k); });
  field("train.adam_beta1", [&](auto k) { c.train.adam.beta1 = d.get_double(k); });
  field("train.adam_beta2", [&](auto k) { c.train.adam.beta2 = d.get_double(k); });
  field("train.adam_eps", [&](auto k) { c.train.adam.eps = d.get_double(k); });
  field("train.checkpoint_every", [&](auto k) { c.train.checkpoint_every = d.get_int(k); });

  field("student.width", [&](auto k) { c.train.student.width = static_cast<int>(d.get_int(k)); });
  field("student.depth", [&](auto k) { c.train.student.depth = static_cast<int>(d.get_int(k)); });
  field("teacher.width", [&](auto k) { c.teacher.architecture.width = static_cast<int>(d.get_int(k)); });
  field("teacher.depth", [&](auto k) { c.teacher.architecture.depth = static_cast<int>(d.get_int(k)); });
  field("teacher.iterations", [&](auto k) { c.teacher.iterations = d.get_int(k); });
  field("teacher.lr", [&](auto k) { c.teacher.lr = d.get_double(k); });
  field("teacher.seed", [&](auto k) { c.teacher.seed = u64(k); });
  field("teacher.checkpoint", [&](auto k) { c.teacher.checkpoint = d.resolve_path(d.get_string(k)).string(); });

  auto& dist = c.train.distill;
  field("loss.lambda_kd", [&](auto k) { dist.weights.kd = d.get_double(k); });
  field("loss.lambda_dcl", [&](auto k) { dist.weights.dcl = d.get_double(k); });
  field("loss.lambda_ce", [&](auto k) { dist.weights.ce = d.get_double(k); });

  field("dcr.alpha", [&](auto k) { c.train.ema.alpha = d.get_double(k); });
  field("dcr.num_negatives", [&](auto k) { dist.num_negatives = static_cast<int>(d.get_int(k)); });
  field("dcr.initial_step", [&](auto k) { c.train.ema.initial_step = d.get_int(k); });
  field("dcr.step_growth", [&](auto k) { c.train.ema.step_growth = d.get_double(k); });
  field("dcr.step_cap", [&](auto k) { c.train.ema.step_cap = d.get_int(k); });
  field("dcr.eps", [&](auto k) { dist.dcl_eps = d.get_double(k); });
  field("dcr.degradation_policy", [&](auto k) { dist.policy = parse_degradation_policy(d.get_string(k)); });

  field("degradation.blur_sigma_min", [&](auto k) { dist.ranges.blur_sigma.lo = d.get_double(k); });
  field("degradation.blur_sigma_max", [&](auto k) { dist.ranges.blur_sigma.hi = d.get_double(k); });
  field("degradation.noise_sigma_min", [&](auto k) { dist.ranges.noise_sigma.lo = d.get_double(k); });
  field("degradation.noise_sigma_max", [&](auto k) { dist.ranges.noise_sigma.hi = d.get_double(k); });
  field("degradation.resize_scale_min", [&](auto k) { dist.ranges.resize_scale.lo = d.get_double(k); });
  field("degradation.resize_scale_max", [&](auto k) { dist.ranges.resize_scale.hi = d.get_double(k); });

  field("dmm.temperature", [&](auto k) { dist.dmm.temperature = d.get_double(k); });
  field("dmm.distance_sign", [&](auto k) { dist.dmm.sign = parse_distance_sign(d.get_string(k)); });
  field("dmm.codebook_path", [&](auto k) { c.codebook.path = d.resolve_path(d.get_string(k)).string(); });
  field("dmm.codebook_size", [&](auto k) { c.codebook.size = static_cast<int>(d.get_int(k)); });
  field("dmm.codebook_seed", [&](auto k) { c.codebook.seed = u64(k); });
  field("dmm.codebook_corpus_seed", [&](auto k) { c.codebook.corpus_seed = u64(k); });
  field("dmm.codebook_images", [&](auto k) { c.codebook.images = static_cast<int>(d.get_int(k)); });

  field("encoder.weights_path", [&](auto k) { c.encoder_weights = d.resolve_path(d.get_string(k)).string(); });
  field("encoder.channels", [&](auto k) { c.encoder.channels = d.get_int_list(k); });
  field("encoder.level_weights", [&](auto k) { c.encoder.level_weights = d.get_double_list(k); });
  field("encoder.seed", [&](auto k) { c.encoder.seed = u64(k); });

  if (errors.empty()) {
    c.train.student.upscale = c.scale;
    c.teacher.architecture.upscale = c.scale;
    field("task", [&](auto) {
      if (c.scale < 1) throw ConfigError("task.scale must be >= 1");
    });
    field("data", [&](auto) {
      if (c.data.train_images < 1 || c.data.heldout_images < 1) {
        throw ConfigError("data.train_images and data.heldout_images must be >= 1");
      }
      if (c.data.image_size < 11 * c.scale || c.data.image_size % c.scale != 0) {
        throw ConfigError("data.image_size must be a multiple of task.scale and at least 11*scale");
      }
      if (c.train.patch_size * c.scale > c.data.image_size) {
        throw ConfigError("train.patch_size * task.scale exceeds data.image_size");
      }
    });
    field("train", [&](auto) { c.train.validate(); });
    field("teacher", [&](auto) {
      c.teacher.architecture.validate();
      if (c.teacher.iterations < 0 || !(c.teacher.lr > 0)) {
        throw ConfigError("teacher.iterations must be >= 0 and teacher.lr > 0");
      }
    });
    field("encoder", [&](auto) { c.encoder.validate(); });
    field("dmm", [&](auto) {
      if (c.codebook.size < 1 || c.codebook.images < 1) {
        throw ConfigError("dmm.codebook_size and dmm.codebook_images must be >= 1");
      }
    });
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

}  // namespace dckd
