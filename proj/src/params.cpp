#include "dckd/params.hpp"

#include <cstring>
#include <functional>
#include <numeric>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

std::string shape_text(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

std::size_t NamedArray::expected_size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

const NamedArray* ParamVector::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParamVector::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  for (auto& e : out.entries_) std::fill(e.values.begin(), e.values.end(), 0.0);
  return out;
}

std::uint64_t ParamVector::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : entries_) {
    fnv_mix(h, e.name.data(), e.name.size());
    fnv_mix(h, e.shape.data(), e.shape.size() * sizeof(int));
    fnv_mix(h, e.values.data(), e.values.size() * sizeof(double));
  }
  return h;
}

void require_compatible(const ParamVector& expected, const ParamVector& actual,
                        const std::string& context) {
  if (expected.size() != actual.size()) {
    throw StructuralError(context + ": expected " + std::to_string(expected.size()) +
                          " parameter entries, got " + std::to_string(actual.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& a = expected[i];
    const auto& b = actual[i];
    if (a.name != b.name) {
      throw StructuralError(context + ": entry " + std::to_string(i) + " is named '" + b.name +
                            "', expected '" + a.name + "'");
    }
    if (a.shape != b.shape || a.values.size() != b.values.size()) {
      throw StructuralError(context + ": entry '" + a.name + "' has shape " +
                            shape_text(b.shape) + ", expected " + shape_text(a.shape));
    }
  }
}

}  // namespace dckd
