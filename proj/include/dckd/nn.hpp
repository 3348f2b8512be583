#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "dckd/tensor.hpp"

namespace dckd::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kKernel = 3;

/// Output spatial extent of a 3x3 convolution with zero padding 1.
constexpr int conv_out_extent(int extent, int stride) { return (extent - 1) / stride + 1; }

/// Weight layout is (3*3*in_channels) x out_channels, row-major, rows ordered
/// (ky, kx, cin). This matches the im2col column order below.
struct ConvView {
  std::span<const double> weight;
  std::span<const double> bias;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
};

/// im2col patches retained from the forward pass for the backward pass.
struct ConvCache {
  RowMatrix columns;
  int in_height = 0;
  int in_width = 0;
};

Tensor conv3x3(const Tensor& input, const ConvView& conv, ConvCache* cache = nullptr);

/// Accumulates into grad_weight / grad_bias when they are non-empty and
/// returns the input gradient when want_input_grad is set (empty otherwise).
Tensor conv3x3_backward(const ConvCache& cache, const Tensor& grad_output, const ConvView& conv,
                        std::span<double> grad_weight, std::span<double> grad_bias,
                        bool want_input_grad);

void relu_inplace(Tensor& t);
/// Zeroes grad where the forward *output* was not positive.
void relu_backward_inplace(Tensor& grad, const Tensor& activated);

/// x * sigmoid(x). Smooth, which keeps finite-difference checks on the encoder honest.
Tensor silu(const Tensor& pre);
Tensor silu_backward(const Tensor& grad, const Tensor& pre);

/// (H, W, C*r*r) -> (rH, rW, C); channel c*r*r + i*r + j lands at (y*r+i, x*r+j, c).
Tensor pixel_shuffle(const Tensor& input, int factor);
Tensor pixel_unshuffle(const Tensor& input, int factor);

}  // namespace dckd::nn
