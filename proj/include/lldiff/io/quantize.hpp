#pragma once

#include <algorithm>
#include <cmath>

namespace lldiff::io {

/// [0,1] -> 8-bit code, round half to even.
inline unsigned char to_u8(double v) {
  return static_cast<unsigned char>(std::nearbyint(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace lldiff::io
