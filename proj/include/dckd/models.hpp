#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dckd/nn.hpp"
#include "dckd/params.hpp"
#include "dckd/tensor.hpp"

namespace dckd {

/// Plain conv stack: `depth` 3x3 convolutions with ReLU between them, the last
/// one producing channels*upscale^2 maps that are pixel-shuffled to the output.
/// depth == 0 is the pass-through model (requires upscale == 1).
struct ArchitectureSpec {
  int channels = 3;
  int width = 8;
  int depth = 2;
  int upscale = 2;

  void validate() const;
  std::size_t parameter_count() const;
  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

ArchitectureSpec teacher_architecture(int upscale);  // 4 layers, width 32
ArchitectureSpec student_architecture(int upscale);  // 2 layers, width 8

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& j);

class RestorationModel {
 public:
  /// Activations kept by a training forward pass.
  struct Trace {
    std::vector<nn::ConvCache> convs;
    std::vector<Tensor> activated;  // post-ReLU output of every hidden layer
    int in_height = 0;
    int in_width = 0;
  };

  /// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), from `seed`.
  RestorationModel(ArchitectureSpec spec, std::uint64_t seed);

  const ArchitectureSpec& spec() const noexcept { return spec_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  Image forward(const Image& input) const;
  Image forward(const Image& input, Trace& trace) const;

  /// Accumulates parameter gradients into `grads` (which must be shaped like the
  /// parameters) unless the model is frozen or `grads` is null. Returns the input
  /// gradient when requested, an empty tensor otherwise.
  Image backward(const Trace& trace, const Image& grad_output, ParamVector* grads,
                 bool want_input_grad = false) const;

  ParamVector extract_params() const { return params_; }
  void inject_params(const ParamVector& params);

  bool trainable() const noexcept { return trainable_; }
  void freeze() noexcept { trainable_ = false; }

  /// Used by the optimizer; throws if the model is frozen.
  ParamVector& trainable_params();

 private:
  nn::ConvView layer_view(int layer) const;
  void check_input(const Image& input) const;

  ArchitectureSpec spec_;
  ParamVector params_;
  bool trainable_ = true;
};

struct CheckpointMeta {
  long iteration = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  RestorationModel model;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const RestorationModel& model,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dckd
