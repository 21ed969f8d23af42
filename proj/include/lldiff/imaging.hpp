#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "lldiff/core/image_planes.hpp"

namespace lldiff {

/// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
inline double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {

// One output coordinate: 4 clamped taps and their weights (half-pixel centers).
struct CubicTaps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

inline CubicTaps cubic_taps(int out_pos, int in_size, int out_size) {
  const double src = (out_pos + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
  const int base = static_cast<int>(std::floor(src));
  CubicTaps taps{};
  for (int k = 0; k < 4; ++k) {
    const int i = base - 1 + k;
    taps.index[static_cast<std::size_t>(k)] = std::clamp(i, 0, in_size - 1);
    taps.weight[static_cast<std::size_t>(k)] = cubic_kernel(src - i);
  }
  return taps;
}

}  // namespace detail

/// Separable bicubic resize with edge clamping. Same size returns a copy.
template <class T>
ImagePlanes<T> bicubic_resize(const ImagePlanes<T>& src, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, ErrorCode::invalid_argument, "resize target must be positive");
  const Shape s = src.shape();
  if (s.h == out_h && s.w == out_w) return src;
  ImagePlanes<T> tmp(Shape{s.n, s.c, s.h, out_w});
  ImagePlanes<T> out(Shape{s.n, s.c, out_h, out_w});
  std::vector<detail::CubicTaps> xt(static_cast<std::size_t>(out_w));
  std::vector<detail::CubicTaps> yt(static_cast<std::size_t>(out_h));
  for (int x = 0; x < out_w; ++x) xt[static_cast<std::size_t>(x)] = detail::cubic_taps(x, s.w, out_w);
  for (int y = 0; y < out_h; ++y) yt[static_cast<std::size_t>(y)] = detail::cubic_taps(y, s.h, out_h);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < out_w; ++x) {
          const auto& tp = xt[static_cast<std::size_t>(x)];
          double acc = 0;
          for (int k = 0; k < 4; ++k) acc += tp.weight[k] * src(n, c, y, tp.index[k]);
          tmp(n, c, y, x) = static_cast<T>(acc);
        }
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
          const auto& tp = yt[static_cast<std::size_t>(y)];
          double acc = 0;
          for (int k = 0; k < 4; ++k) acc += tp.weight[k] * tmp(n, c, tp.index[k], x);
          out(n, c, y, x) = static_cast<T>(acc);
        }
    }
  return out;
}

/// Integer-factor box downscale (area averaging).
template <class T>
ImagePlanes<T> area_downscale(const ImagePlanes<T>& src, int factor) {
  require(factor >= 1, ErrorCode::invalid_argument, "downscale factor must be >= 1");
  if (factor == 1) return src;
  const Shape s = src.shape();
  require(s.h % factor == 0 && s.w % factor == 0, ErrorCode::shape_mismatch,
          "image " + s.str() + " not divisible by factor " + std::to_string(factor));
  ImagePlanes<T> out(Shape{s.n, s.c, s.h / factor, s.w / factor});
  const double inv = 1.0 / (factor * factor);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
          double acc = 0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) acc += src(n, c, y * factor + dy, x * factor + dx);
          out(n, c, y, x) = static_cast<T>(acc * inv);
        }
  return out;
}

template <class T>
ImagePlanes<T> clamp01(ImagePlanes<T> img) {
  for (T& v : img.values()) v = std::clamp(v, T(0), T(1));
  return img;
}

template <class T>
double mean_value(const ImagePlanes<T>& img) {
  double acc = 0;
  for (T v : img.values()) acc += static_cast<double>(v);
  return img.size() == 0 ? 0.0 : acc / static_cast<double>(img.size());
}

}  // namespace lldiff
