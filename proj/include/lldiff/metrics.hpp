#pragma once

#include <cmath>
#include <vector>

#include "lldiff/core/image_planes.hpp"

namespace lldiff {

inline constexpr double kPsnrCap = 99.0;

struct MetricReport {
  double psnr_db = 0;
  double ssim = 0;
};

/// BT.601 full-range luma of a 3-channel image.
template <class T>
ImagePlanes<double> rgb_to_y(const ImagePlanes<T>& img) {
  require(img.channels() == 3, ErrorCode::shape_mismatch,
          "rgb_to_y needs 3 channels, got " + std::to_string(img.channels()));
  ImagePlanes<double> y(Shape{img.batch(), 1, img.height(), img.width()});
  for (int n = 0; n < img.batch(); ++n) {
    const auto r = img.plane(n, 0), g = img.plane(n, 1), b = img.plane(n, 2);
    auto out = y.plane(n, 0);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = 0.299 * static_cast<double>(r[i]) + 0.587 * static_cast<double>(g[i]) + 0.114 * static_cast<double>(b[i]);
  }
  return y;
}

/// Y channel of a 3-channel image; a single-channel image is its own luma.
template <class T>
ImagePlanes<double> luma(const ImagePlanes<T>& img) {
  if (img.channels() == 1) return img.template cast<double>();
  return rgb_to_y(img);
}

template <class T>
double psnr_y(const ImagePlanes<T>& a, const ImagePlanes<T>& b, double cap = kPsnrCap) {
  require_same_shape(a.shape(), b.shape(), "psnr_y");
  const auto ya = luma(a), yb = luma(b);
  double acc = 0;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double d = ya[i] - yb[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(ya.size());
  if (mse == 0.0) return cap;
  return std::min(cap, -10.0 * std::log10(mse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) sum += w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace detail

/// Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over all fully interior windows.
template <class T>
double ssim_y(const ImagePlanes<T>& a, const ImagePlanes<T>& b) {
  constexpr int win = 11;
  require_same_shape(a.shape(), b.shape(), "ssim_y");
  require(a.height() >= win && a.width() >= win, ErrorCode::invalid_argument,
          "ssim_y needs images of at least 11x11, got " + a.shape().str());
  const auto ya = luma(a), yb = luma(b);
  const auto g = detail::gaussian_window(win, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int oh = a.height() - win + 1, ow = a.width() - win + 1;
  double total = 0;
  for (int n = 0; n < a.batch(); ++n)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < win; ++dy)
          for (int dx = 0; dx < win; ++dx) {
            const double w = g[static_cast<std::size_t>(dy)] * g[static_cast<std::size_t>(dx)];
            const double va = ya(n, 0, y + dy, x + dx), vb = yb(n, 0, y + dy, x + dx);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
  return total / (static_cast<double>(a.batch()) * oh * ow);
}

template <class T>
MetricReport evaluate_pair(const ImagePlanes<T>& restored, const ImagePlanes<T>& reference) {
  return MetricReport{psnr_y(restored, reference), ssim_y(restored, reference)};
}

}  // namespace lldiff
