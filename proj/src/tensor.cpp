#include "dckd/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dckd/errors.hpp"

namespace dckd {

Tensor::Tensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw ShapeError("negative tensor dimension");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

std::string Tensor::shape_string() const {
  return "(" + std::to_string(height_) + ", " + std::to_string(width_) + ", " +
         std::to_string(channels_) + ")";
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "Tensor::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (!a.same_shape(b)) {
    throw StructuralError(std::string(context) + ": shape mismatch " + a.shape_string() +
                          " vs " + b.shape_string());
  }
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor clamp01(Tensor t) {
  for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

}  // namespace dckd
