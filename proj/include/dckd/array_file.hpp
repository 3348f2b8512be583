#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "dckd/params.hpp"

namespace dckd {

/// Container used for checkpoints, encoder weights and codebooks.
///
///   bytes 0..7  magic "DCKDARR1"
///   u64 (LE)    length n of the JSON header
///   n bytes     JSON: {"meta": {...}, "arrays": [{"name", "shape", "count"}...]}
///   payload     IEEE-754 float64 little-endian, arrays concatenated in header order
///
/// Values are written as raw bytes, so a read/write cycle is bit-exact.
struct ArrayFile {
  nlohmann::json meta = nlohmann::json::object();
  ParamVector arrays;
};

void write_array_file(const std::filesystem::path& path, const ArrayFile& file);
ArrayFile read_array_file(const std::filesystem::path& path);

}  // namespace dckd
