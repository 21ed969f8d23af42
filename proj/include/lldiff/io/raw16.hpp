#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "lldiff/core/image_planes.hpp"

namespace lldiff::io {

/// Sensor code range of the synthetic 14-bit Raw planes.
struct RawCoding {
  int bit_depth = 14;
  int black_level = 0;
  int white_level = 16383;

  bool operator==(const RawCoding&) const = default;
};

/// Normalized value -> integer code, round half to even.
inline std::uint16_t encode_raw(double v, const RawCoding& c = {}) {
  const double span = c.white_level - c.black_level;
  return static_cast<std::uint16_t>(c.black_level + std::nearbyint(std::clamp(v, 0.0, 1.0) * span));
}

inline double decode_raw(std::uint16_t code, const RawCoding& c = {}) {
  return std::clamp((static_cast<double>(code) - c.black_level) / (c.white_level - c.black_level), 0.0, 1.0);
}

/// One [1,1,H,W] plane as row-major 16-bit little-endian codes, no header;
/// the dimensions live in the manifest.
template <class T>
void write_raw16(const std::filesystem::path& path, const ImagePlanes<T>& plane, const RawCoding& coding = {}) {
  require(plane.batch() == 1 && plane.channels() == 1, ErrorCode::shape_mismatch, "Raw plane must be [1,1,H,W]");
  std::vector<unsigned char> bytes(plane.size() * 2);
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const std::uint16_t code = encode_raw(static_cast<double>(plane[i]), coding);
    bytes[2 * i] = static_cast<unsigned char>(code & 0xff);
    bytes[2 * i + 1] = static_cast<unsigned char>(code >> 8);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorCode::io, "cannot write Raw plane " + path.string());
}

template <class T>
ImagePlanes<T> read_raw16(const std::filesystem::path& path, int height, int width, const RawCoding& coding = {}) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::io, "cannot open Raw plane " + path.string());
  ImagePlanes<T> out(Shape{1, 1, height, width});
  std::vector<unsigned char> bytes(out.size() * 2);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(is.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorCode::format,
          "Raw plane " + path.string() + " is shorter than " + std::to_string(height) + "x" + std::to_string(width));
  require(is.peek() == std::char_traits<char>::eof(), ErrorCode::format,
          "Raw plane " + path.string() + " has trailing bytes");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto code = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    require(code <= coding.white_level, ErrorCode::format, "Raw code above white level in " + path.string());
    out[i] = static_cast<T>(decode_raw(code, coding));
  }
  return out;
}

}  // namespace lldiff::io
