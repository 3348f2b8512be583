#include "dckd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dckd/errors.hpp"

namespace dckd::nn {
namespace {

void check_view(const Tensor& input, const ConvView& conv) {
  if (input.channels() != conv.in_channels) {
    throw ShapeError("conv3x3: expected " + std::to_string(conv.in_channels) +
                     " input channels, got " + std::to_string(input.channels()));
  }
  const auto rows = static_cast<std::size_t>(kKernel * kKernel * conv.in_channels);
  if (conv.weight.size() != rows * conv.out_channels ||
      conv.bias.size() != static_cast<std::size_t>(conv.out_channels)) {
    throw StructuralError("conv3x3: weight/bias sizes do not match the declared channels");
  }
}

RowMatrix im2col(const Tensor& input, int stride) {
  const int out_h = conv_out_extent(input.height(), stride);
  const int out_w = conv_out_extent(input.width(), stride);
  const int cin = input.channels();
  RowMatrix cols = RowMatrix::Zero(out_h * out_w, kKernel * kKernel * cin);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      double* row = cols.row(oy * out_w + ox).data();
      for (int ky = 0; ky < kKernel; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= input.height()) continue;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= input.width()) continue;
          const auto src = input.pixel(iy, ix);
          double* dst = row + (ky * kKernel + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] = src[c];
        }
      }
    }
  }
  return cols;
}

// Eigen picks its vectorized code path from each operand's address, so a Map
// over std::vector storage can round differently from run to run. Copying into
// Eigen-owned (aligned) matrices keeps results independent of the allocator.
RowMatrix owned(const double* data, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMatrix>(data, rows, cols);
}

}  // namespace

Tensor conv3x3(const Tensor& input, const ConvView& conv, ConvCache* cache) {
  check_view(input, conv);
  const int out_h = conv_out_extent(input.height(), conv.stride);
  const int out_w = conv_out_extent(input.width(), conv.stride);
  const int k = kKernel * kKernel * conv.in_channels;

  RowMatrix cols = im2col(input, conv.stride);
  const RowMatrix w = owned(conv.weight.data(), k, conv.out_channels);
  const RowMatrix b = owned(conv.bias.data(), 1, conv.out_channels);

  RowMatrix o = cols * w;
  o.rowwise() += b.row(0);
  Tensor out(out_h, out_w, conv.out_channels);
  std::copy(o.data(), o.data() + o.size(), out.data());

  if (cache != nullptr) {
    cache->columns = std::move(cols);
    cache->in_height = input.height();
    cache->in_width = input.width();
  }
  return out;
}

Tensor conv3x3_backward(const ConvCache& cache, const Tensor& grad_output, const ConvView& conv,
                        std::span<double> grad_weight, std::span<double> grad_bias,
                        bool want_input_grad) {
  const int k = kKernel * kKernel * conv.in_channels;
  const int p = grad_output.pixels();
  if (grad_output.channels() != conv.out_channels || cache.columns.rows() != p) {
    throw StructuralError("conv3x3_backward: gradient does not match the cached forward pass");
  }
  const RowMatrix g = owned(grad_output.data(), p, conv.out_channels);

  if (!grad_weight.empty()) {
    const RowMatrix gw = cache.columns.transpose() * g;
    for (Eigen::Index i = 0; i < gw.size(); ++i) grad_weight[i] += gw.data()[i];
  }
  if (!grad_bias.empty()) {
    const RowMatrix gb = g.colwise().sum();
    for (Eigen::Index i = 0; i < gb.size(); ++i) grad_bias[i] += gb.data()[i];
  }
  if (!want_input_grad) return {};

  const RowMatrix w = owned(conv.weight.data(), k, conv.out_channels);
  const RowMatrix gcols = g * w.transpose();

  Tensor grad_in(cache.in_height, cache.in_width, conv.in_channels);
  const int out_w = grad_output.width();
  const int cin = conv.in_channels;
  for (int oy = 0; oy < grad_output.height(); ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const double* row = gcols.row(oy * out_w + ox).data();
      for (int ky = 0; ky < kKernel; ++ky) {
        const int iy = oy * conv.stride + ky - 1;
        if (iy < 0 || iy >= cache.in_height) continue;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int ix = ox * conv.stride + kx - 1;
          if (ix < 0 || ix >= cache.in_width) continue;
          auto dst = grad_in.pixel(iy, ix);
          const double* src = row + (ky * kKernel + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
  return grad_in;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
}

void relu_backward_inplace(Tensor& grad, const Tensor& activated) {
  require_same_shape(grad, activated, "relu_backward");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > 0.0)) grad[i] = 0.0;
  }
}

Tensor silu(const Tensor& pre) {
  Tensor out = pre;
  for (double& v : out.values()) v = v / (1.0 + std::exp(-v));
  return out;
}

Tensor silu_backward(const Tensor& grad, const Tensor& pre) {
  require_same_shape(grad, pre, "silu_backward");
  Tensor out = grad;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-pre[i]));
    out[i] *= s * (1.0 + pre[i] * (1.0 - s));
  }
  return out;
}

Tensor pixel_shuffle(const Tensor& input, int factor) {
  if (factor == 1) return input;
  const int rr = factor * factor;
  if (factor < 1 || input.channels() % rr != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(input.channels()) +
                     " not divisible by factor^2 = " + std::to_string(rr));
  }
  const int c_out = input.channels() / rr;
  Tensor out(input.height() * factor, input.width() * factor, c_out);
  for (int y = 0; y < input.height(); ++y) {
    for (int x = 0; x < input.width(); ++x) {
      const auto src = input.pixel(y, x);
      for (int c = 0; c < c_out; ++c) {
        for (int i = 0; i < factor; ++i) {
          for (int j = 0; j < factor; ++j) {
            out.at(y * factor + i, x * factor + j, c) = src[c * rr + i * factor + j];
          }
        }
      }
    }
  }
  return out;
}

Tensor pixel_unshuffle(const Tensor& input, int factor) {
  if (factor == 1) return input;
  if (factor < 1 || input.height() % factor != 0 || input.width() % factor != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims not divisible by factor");
  }
  const int rr = factor * factor;
  Tensor out(input.height() / factor, input.width() / factor, input.channels() * rr);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      auto dst = out.pixel(y, x);
      for (int c = 0; c < input.channels(); ++c) {
        for (int i = 0; i < factor; ++i) {
          for (int j = 0; j < factor; ++j) {
            dst[c * rr + i * factor + j] = input.at(y * factor + i, x * factor + j, c);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace dckd::nn
