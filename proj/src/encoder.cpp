#include "dckd/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "dckd/array_file.hpp"
#include "dckd/errors.hpp"

namespace dckd {

std::vector<double> default_level_weights() {
  return {1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0};
}

void EncoderConfig::validate() const {
  if (in_channels < 1) throw ParameterError("encoder: in_channels must be >= 1");
  if (channels.empty()) throw ParameterError("encoder: at least one stage is required");
  if (channels.size() > 16) throw ParameterError("encoder: too many stages");
  for (int c : channels) {
    if (c < 1) throw ParameterError("encoder: stage widths must be >= 1");
  }
  if (level_weights.size() != channels.size()) {
    throw ParameterError("encoder: " + std::to_string(level_weights.size()) +
                         " level weights given for " + std::to_string(channels.size()) + " stages");
  }
  for (double w : level_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("encoder: level weights must be >= 0");
  }
}

FeatureEncoder::FeatureEncoder(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  int cin = config_.in_channels;
  for (std::size_t s = 0; s < config_.channels.size(); ++s) {
    const int cout = config_.channels[s];
    const double bound = std::sqrt(6.0 / (9.0 * cin));
    std::uniform_real_distribution<double> dist(-bound, bound);
    NamedArray w{"stage" + std::to_string(s) + ".weight", {3, 3, cin, cout}, {}};
    w.values.resize(w.expected_size());
    for (double& v : w.values) v = dist(rng);
    NamedArray b{"stage" + std::to_string(s) + ".bias", {cout}, std::vector<double>(cout, 0.0)};
    params_.entries().push_back(std::move(w));
    params_.entries().push_back(std::move(b));
    cin = cout;
  }
}

FeatureEncoder::FeatureEncoder(EncoderConfig config, ParamVector weights)
    : FeatureEncoder(std::move(config)) {
  try {
    require_compatible(params_, weights, "encoder weights");
  } catch (const StructuralError& e) {
    throw LoadError(e.what());
  }
  params_ = std::move(weights);
}

nn::ConvView FeatureEncoder::stage_view(int stage) const {
  const int cin = stage == 0 ? config_.in_channels : config_.channels[stage - 1];
  return {params_[2 * stage].values, params_[2 * stage + 1].values, cin,
          config_.channels[stage], stage == 0 ? 1 : 2};
}

void FeatureEncoder::check_input(const Image& img) const {
  const int m = required_multiple();
  if (img.channels() != config_.in_channels) {
    throw ShapeError("encoder expects " + std::to_string(config_.in_channels) +
                     " channels, got " + img.shape_string());
  }
  if (img.height() < m || img.width() < m || img.height() % m != 0 || img.width() % m != 0) {
    throw ShapeError("encoder input " + img.shape_string() +
                     ": spatial dims must be positive multiples of " + std::to_string(m));
  }
}

FeaturePyramid FeatureEncoder::encode(const Image& img) const {
  Trace unused;
  return encode(img, unused);
}

FeaturePyramid FeatureEncoder::encode(const Image& img, Trace& trace) const {
  check_input(img);
  trace.convs.assign(levels(), {});
  trace.pre_activation.assign(levels(), {});
  FeaturePyramid pyr;
  pyr.weights = config_.level_weights;
  const Tensor* x = &img;
  for (int s = 0; s < levels(); ++s) {
    trace.pre_activation[s] = nn::conv3x3(*x, stage_view(s), &trace.convs[s]);
    pyr.levels.push_back(nn::silu(trace.pre_activation[s]));
    x = &pyr.levels.back();
  }
  return pyr;
}

Tensor FeatureEncoder::deepest_features(const Image& img) const {
  return std::move(encode(img).levels.back());
}

Image FeatureEncoder::backward(const Trace& trace, std::span<const Tensor> level_grads) const {
  if (static_cast<int>(level_grads.size()) != levels() ||
      static_cast<int>(trace.convs.size()) != levels()) {
    throw StructuralError("encoder backward: expected one gradient per level");
  }
  Tensor g;
  for (int s = levels() - 1; s >= 0; --s) {
    if (!level_grads[s].empty()) {
      if (g.empty()) {
        g = level_grads[s];
      } else {
        g += level_grads[s];
      }
    }
    if (g.empty()) continue;
    const Tensor local = nn::silu_backward(g, trace.pre_activation[s]);
    g = nn::conv3x3_backward(trace.convs[s], local, stage_view(s), {}, {}, true);
  }
  if (g.empty()) {
    const auto& c0 = trace.convs.front();
    return Image(c0.in_height, c0.in_width, config_.in_channels);
  }
  return g;
}

void save_encoder(const std::filesystem::path& path, const FeatureEncoder& encoder) {
  ArrayFile file;
  const auto& c = encoder.config();
  file.meta = {{"kind", "encoder"},
               {"in_channels", c.in_channels},
               {"channels", c.channels},
               {"level_weights", c.level_weights},
               {"seed", c.seed}};
  file.arrays = encoder.params();
  write_array_file(path, file);
}

FeatureEncoder load_external_encoder(const std::filesystem::path& path) {
  ArrayFile file = read_array_file(path);
  EncoderConfig config;
  try {
    if (file.meta.value("kind", "") != "encoder") {
      throw LoadError("'" + path.string() + "' is not an encoder weight file");
    }
    config.in_channels = file.meta.at("in_channels").get<int>();
    config.channels = file.meta.at("channels").get<std::vector<int>>();
    config.level_weights = file.meta.at("level_weights").get<std::vector<double>>();
    config.seed = file.meta.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path.string() + "': bad encoder metadata: " + e.what());
  }
  for (const auto& a : file.arrays.entries()) {
    for (double v : a.values) {
      if (!std::isfinite(v)) throw LoadError("'" + path.string() + "': array '" + a.name + "' is not finite");
    }
  }
  try {
    return FeatureEncoder(std::move(config), std::move(file.arrays));
  } catch (const LoadError& e) {
    throw LoadError("'" + path.string() + "': " + e.what());
  }
}

Codebook::Codebook(int size, int dim, std::vector<double> entries)
    : size_(size), dim_(dim), entries_(std::move(entries)) {
  if (size < 1 || dim < 1) throw StructuralError("codebook: M and d must be >= 1");
  if (entries_.size() != static_cast<std::size_t>(size) * dim) {
    throw StructuralError("codebook: expected " + std::to_string(size) + "x" + std::to_string(dim) +
                          " entries, got " + std::to_string(entries_.size()) + " values");
  }
  for (double v : entries_) {
    if (!std::isfinite(v)) throw StructuralError("codebook: entries must be finite");
  }
  std::set<std::vector<double>> seen;
  for (int m = 0; m < size_; ++m) {
    auto row = entry(m);
    if (!seen.emplace(row.begin(), row.end()).second) {
      throw StructuralError("codebook: entry " + std::to_string(m) + " duplicates an earlier entry");
    }
  }
}

std::uint64_t Codebook::checksum() const {
  ParamVector p({NamedArray{"codebook", {size_, dim_}, entries_}});
  return p.checksum();
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook) {
  ArrayFile file;
  file.meta = {{"kind", "codebook"}, {"M", codebook.size()}, {"d", codebook.dim()}};
  file.arrays.entries().push_back(
      NamedArray{"codebook", {codebook.size(), codebook.dim()}, codebook.entries()});
  write_array_file(path, file);
}

Codebook load_codebook(const std::filesystem::path& path) {
  ArrayFile file = read_array_file(path);
  int m = 0;
  int d = 0;
  try {
    if (file.meta.value("kind", "") != "codebook") {
      throw LoadError("'" + path.string() + "' is not a codebook file");
    }
    m = file.meta.at("M").get<int>();
    d = file.meta.at("d").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path.string() + "': bad codebook header: " + e.what());
  }
  const NamedArray* arr = file.arrays.find("codebook");
  if (arr == nullptr || file.arrays.size() != 1) {
    throw LoadError("'" + path.string() + "': expected exactly one array named 'codebook'");
  }
  if (arr->shape != std::vector<int>{m, d}) {
    throw LoadError("'" + path.string() + "': array 'codebook' shape disagrees with header M,d");
  }
  try {
    return Codebook(m, d, arr->values);
  } catch (const StructuralError& e) {
    throw LoadError("'" + path.string() + "': array 'codebook': " + e.what());
  }
}

Codebook build_codebook(const FeatureEncoder& encoder, std::span<const Image> images, int size,
                        std::uint64_t seed, int iterations) {
  if (size < 1) throw ParameterError("codebook size must be >= 1");
  const int d = encoder.embedding_dim();
  std::vector<std::vector<double>> points;
  for (const auto& img : images) {
    const Tensor f = encoder.deepest_features(img);
    for (int y = 0; y < f.height(); ++y) {
      for (int x = 0; x < f.width(); ++x) {
        auto p = f.pixel(y, x);
        points.emplace_back(p.begin(), p.end());
      }
    }
  }
  if (points.size() < static_cast<std::size_t>(size)) {
    throw ParameterError("codebook: " + std::to_string(points.size()) +
                         " feature vectors cannot support " + std::to_string(size) + " codes");
  }
  auto dist2 = [d](const std::vector<double>& a, const double* b) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };

  Rng rng(seed);
  std::vector<double> centers;
  centers.reserve(static_cast<std::size_t>(size) * d);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  const auto& first = points[pick(rng)];
  centers.insert(centers.end(), first.begin(), first.end());
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  for (int k = 1; k < size; ++k) {
    const double* last = centers.data() + static_cast<std::size_t>(k - 1) * d;
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      nearest[i] = std::min(nearest[i], dist2(points[i], last));
      total += nearest[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (chosen = 0; chosen + 1 < points.size(); ++chosen) {
        r -= nearest[chosen];
        if (r <= 0.0 && nearest[chosen] > 0.0) break;
      }
    }
    centers.insert(centers.end(), points[chosen].begin(), points[chosen].end());
  }

  std::vector<int> assign(points.size(), 0);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < size; ++k) {
        const double dd = dist2(points[i], centers.data() + static_cast<std::size_t>(k) * d);
        if (dd < best) {
          best = dd;
          assign[i] = k;
        }
      }
    }
    std::vector<double> sums(centers.size(), 0.0);
    std::vector<int> counts(size, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++counts[assign[i]];
      for (int j = 0; j < d; ++j) sums[static_cast<std::size_t>(assign[i]) * d + j] += points[i][j];
    }
    for (int k = 0; k < size; ++k) {
      if (counts[k] == 0) continue;  // empty cluster keeps its previous center
      for (int j = 0; j < d; ++j) {
        centers[static_cast<std::size_t>(k) * d + j] =
            sums[static_cast<std::size_t>(k) * d + j] / counts[k];
      }
    }
  }
  return Codebook(size, d, std::move(centers));
}

}  // namespace dckd
