#include "dckd/array_file.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dckd/errors.hpp"

namespace dckd {
namespace {

static_assert(std::endian::native == std::endian::little,
              "array files are little-endian; add byte swapping for this host");

constexpr char kMagic[8] = {'D', 'C', 'K', 'D', 'A', 'R', 'R', '1'};

}  // namespace

void write_array_file(const std::filesystem::path& path, const ArrayFile& file) {
  nlohmann::json header;
  header["meta"] = file.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : file.arrays.entries()) {
    if (a.values.size() != a.expected_size()) {
      throw StructuralError("write_array_file: array '" + a.name + "' size disagrees with shape");
    }
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"count", a.values.size()}});
  }
  const std::string text = header.dump();
  const std::uint64_t n = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : file.arrays.entries()) {
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  }
  if (!out) throw LoadError("write to '" + path.string() + "' failed");
}

ArrayFile read_array_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("'" + path.string() + "' is not a DCKD array file (bad magic)");
  }
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n > (1ULL << 30)) throw LoadError("'" + path.string() + "': corrupt header length");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw LoadError("'" + path.string() + "': truncated header");

  ArrayFile file;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    file.meta = header.value("meta", nlohmann::json::object());
    for (const auto& a : header.at("arrays")) {
      NamedArray arr;
      arr.name = a.at("name").get<std::string>();
      arr.shape = a.at("shape").get<std::vector<int>>();
      const auto count = a.at("count").get<std::size_t>();
      if (count != arr.expected_size()) {
        throw LoadError("array '" + arr.name + "': count disagrees with shape");
      }
      arr.values.resize(count);
      file.arrays.entries().push_back(std::move(arr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path.string() + "': malformed header: " + e.what());
  }
  for (auto& a : file.arrays.entries()) {
    in.read(reinterpret_cast<char*>(a.values.data()),
            static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    if (!in) throw LoadError("'" + path.string() + "': truncated payload in array '" + a.name + "'");
  }
  return file;
}

}  // namespace dckd
