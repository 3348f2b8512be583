#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dckd {

/// One named parameter array. `shape` is informational; `values` is flat.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;

  std::size_t expected_size() const;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Ordered collection of named arrays: model parameters, gradients, optimizer
/// moments and EMA history all use this representation.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<NamedArray> entries) : entries_(std::move(entries)) {}

  std::vector<NamedArray>& entries() noexcept { return entries_; }
  const std::vector<NamedArray>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  NamedArray& operator[](std::size_t i) { return entries_[i]; }
  const NamedArray& operator[](std::size_t i) const { return entries_[i]; }

  const NamedArray* find(const std::string& name) const;
  std::size_t scalar_count() const;

  /// Same names, order and shapes, values zeroed.
  ParamVector zeros_like() const;

  /// 64-bit FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t checksum() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<NamedArray> entries_;
};

/// Throws StructuralError naming the first entry whose name or shape differs.
void require_compatible(const ParamVector& expected, const ParamVector& actual,
                        const std::string& context);

}  // namespace dckd
