#include "dckd/models.hpp"

#include <cmath>
#include <random>

#include "dckd/array_file.hpp"
#include "dckd/errors.hpp"

namespace dckd {
namespace {

int layer_in(const ArchitectureSpec& s, int layer) { return layer == 0 ? s.channels : s.width; }
int layer_out(const ArchitectureSpec& s, int layer) {
  return layer == s.depth - 1 ? s.channels * s.upscale * s.upscale : s.width;
}

}  // namespace

void ArchitectureSpec::validate() const {
  if (channels < 1) throw ParameterError("architecture: channels must be >= 1");
  if (depth < 0) throw ParameterError("architecture: depth must be >= 0");
  if (upscale < 1) throw ParameterError("architecture: upscale must be >= 1");
  if (depth == 0 && upscale != 1) {
    throw ParameterError("architecture: a pass-through model (depth 0) requires upscale 1");
  }
  if (depth >= 2 && width < 1) throw ParameterError("architecture: width must be >= 1");
}

std::size_t ArchitectureSpec::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < depth; ++l) {
    const std::size_t cin = layer_in(*this, l);
    const std::size_t cout = layer_out(*this, l);
    n += 9 * cin * cout + cout;
  }
  return n;
}

ArchitectureSpec teacher_architecture(int upscale) { return {3, 32, 4, upscale}; }
ArchitectureSpec student_architecture(int upscale) { return {3, 8, 2, upscale}; }

nlohmann::json to_json(const ArchitectureSpec& spec) {
  return {{"channels", spec.channels},
          {"width", spec.width},
          {"depth", spec.depth},
          {"upscale", spec.upscale}};
}

ArchitectureSpec architecture_from_json(const nlohmann::json& j) {
  ArchitectureSpec s;
  s.channels = j.at("channels").get<int>();
  s.width = j.at("width").get<int>();
  s.depth = j.at("depth").get<int>();
  s.upscale = j.at("upscale").get<int>();
  s.validate();
  return s;
}

RestorationModel::RestorationModel(ArchitectureSpec spec, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  for (int l = 0; l < spec_.depth; ++l) {
    const int cin = layer_in(spec_, l);
    const int cout = layer_out(spec_, l);
    const double bound = 1.0 / std::sqrt(9.0 * cin);
    std::uniform_real_distribution<double> dist(-bound, bound);
    NamedArray w{"conv" + std::to_string(l) + ".weight", {3, 3, cin, cout}, {}};
    w.values.resize(w.expected_size());
    for (double& v : w.values) v = dist(rng);
    NamedArray b{"conv" + std::to_string(l) + ".bias", {cout}, {}};
    b.values.resize(cout);
    for (double& v : b.values) v = dist(rng);
    params_.entries().push_back(std::move(w));
    params_.entries().push_back(std::move(b));
  }
}

nn::ConvView RestorationModel::layer_view(int layer) const {
  const auto& w = params_[2 * layer];
  const auto& b = params_[2 * layer + 1];
  return {w.values, b.values, layer_in(spec_, layer), layer_out(spec_, layer), 1};
}

void RestorationModel::check_input(const Image& input) const {
  if (input.channels() != spec_.channels || input.height() < 1 || input.width() < 1) {
    throw ShapeError("model expects an (H, W, " + std::to_string(spec_.channels) +
                     ") input with H, W >= 1, got " + input.shape_string());
  }
}

Image RestorationModel::forward(const Image& input) const {
  check_input(input);
  if (spec_.depth == 0) return input;
  Tensor x = input;
  for (int l = 0; l < spec_.depth; ++l) {
    x = nn::conv3x3(x, layer_view(l));
    if (l + 1 < spec_.depth) nn::relu_inplace(x);
  }
  return nn::pixel_shuffle(x, spec_.upscale);
}

Image RestorationModel::forward(const Image& input, Trace& trace) const {
  check_input(input);
  trace = Trace{};
  trace.in_height = input.height();
  trace.in_width = input.width();
  if (spec_.depth == 0) return input;
  trace.convs.resize(spec_.depth);
  Tensor x = input;
  for (int l = 0; l < spec_.depth; ++l) {
    x = nn::conv3x3(x, layer_view(l), &trace.convs[l]);
    if (l + 1 < spec_.depth) {
      nn::relu_inplace(x);
      trace.activated.push_back(x);
    }
  }
  return nn::pixel_shuffle(x, spec_.upscale);
}

Image RestorationModel::backward(const Trace& trace, const Image& grad_output, ParamVector* grads,
                                 bool want_input_grad) const {
  if (grad_output.height() != trace.in_height * spec_.upscale ||
      grad_output.width() != trace.in_width * spec_.upscale ||
      grad_output.channels() != spec_.channels) {
    throw StructuralError("backward: output gradient " + grad_output.shape_string() +
                          " does not match the traced forward pass");
  }
  if (spec_.depth == 0) return want_input_grad ? grad_output : Image{};
  const bool accumulate = trainable_ && grads != nullptr;
  if (accumulate) require_compatible(params_, *grads, "backward");

  Tensor g = nn::pixel_unshuffle(grad_output, spec_.upscale);
  for (int l = spec_.depth - 1; l >= 0; --l) {
    if (l + 1 < spec_.depth) nn::relu_backward_inplace(g, trace.activated[l]);
    std::span<double> gw;
    std::span<double> gb;
    if (accumulate) {
      gw = (*grads)[2 * l].values;
      gb = (*grads)[2 * l + 1].values;
    }
    const bool need_input = l > 0 || want_input_grad;
    g = nn::conv3x3_backward(trace.convs[l], g, layer_view(l), gw, gb, need_input);
  }
  return want_input_grad ? g : Image{};
}

void RestorationModel::inject_params(const ParamVector& params) {
  require_compatible(params_, params, "inject_params");
  params_ = params;
}

ParamVector& RestorationModel::trainable_params() {
  if (!trainable_) throw StructuralError("attempted to update a frozen model");
  return params_;
}

void save_checkpoint(const std::filesystem::path& path, const RestorationModel& model,
                     const CheckpointMeta& meta) {
  ArrayFile file;
  file.meta = {{"kind", "checkpoint"},
               {"architecture", to_json(model.spec())},
               {"iteration", meta.iteration},
               {"seed", meta.seed},
               {"extra", meta.extra}};
  file.arrays = model.extract_params();
  write_array_file(path, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ArrayFile file = read_array_file(path);
  try {
    if (file.meta.value("kind", "") != "checkpoint") {
      throw LoadError("'" + path.string() + "' is not a model checkpoint");
    }
    RestorationModel model(architecture_from_json(file.meta.at("architecture")), 0);
    try {
      model.inject_params(file.arrays);
    } catch (const StructuralError& e) {
      throw LoadError("'" + path.string() + "': " + e.what());
    }
    CheckpointMeta meta;
    meta.iteration = file.meta.at("iteration").get<long>();
    meta.seed = file.meta.at("seed").get<std::uint64_t>();
    meta.extra = file.meta.value("extra", nlohmann::json::object());
    return {std::move(model), std::move(meta)};
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path.string() + "': bad checkpoint metadata: " + e.what());
  }
}

}  // namespace dckd
