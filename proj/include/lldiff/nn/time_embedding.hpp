#pragma once

#include <cmath>
#include <vector>

#include "lldiff/core/error.hpp"

namespace lldiff::nn {

/// Frequency of sin/cos pair i for an embedding of width dim:
/// 10000^(-2i/dim).
inline double embedding_frequency(int pair, int dim) {
  return std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(dim));
}

/// Sinusoidal step embedding, interleaved: [sin(w0 t), cos(w0 t), sin(w1 t), ...].
inline std::vector<double> time_embedding(int t, int dim, int steps) {
  require(dim > 0 && dim % 2 == 0, ErrorCode::invalid_argument, "time embedding width must be even");
  require(t >= 0 && t <= steps, ErrorCode::out_of_range,
          "time step " + std::to_string(t) + " outside 0.." + std::to_string(steps));
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim / 2; ++i) {
    const double arg = static_cast<double>(t) * embedding_frequency(i, dim);
    out[static_cast<std::size_t>(2 * i)] = std::sin(arg);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(arg);
  }
  return out;
}

}  // namespace lldiff::nn
