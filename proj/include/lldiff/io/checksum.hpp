#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lldiff/core/error.hpp"

namespace lldiff::io {

/// 64-bit FNV-1a, incremental.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char b : bytes) {
      hash_ ^= b;
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.value();
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::io, "cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline std::uint64_t checksum_file(const std::filesystem::path& path) { return fnv1a(read_file(path)); }

/// Hash of every regular file below root, keyed by relative path in sorted
/// order, so two trees agree iff names and bytes agree.
inline std::uint64_t checksum_tree(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& f : files) {
    h.update(f.generic_string());
    h.update(std::string_view("\0", 1));
    h.update(read_file(root / f));
  }
  return h.value();
}

}  // namespace lldiff::io
