#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lldiff/core/rng.hpp"
#include "lldiff/data/synth.hpp"
#include "lldiff/imaging.hpp"
#include "lldiff/metrics.hpp"

namespace lldiff::data {

// ---------------------------------------------------------------------------
// Robust mean and intensity alignment

/// Per-pixel sigma-clipped mean. Each iteration drops samples farther than
/// clip_sigma population standard deviations from the current mean of the
/// kept set. Samples are sorted per pixel first, so the result does not
/// depend on stack order even in the last bit.
template <class T>
ImagePlanes<T> robust_mean(const std::vector<ImagePlanes<T>>& stack, double clip_sigma = 2.5, int iters = 3) {
  require(stack.size() >= 2, ErrorCode::invalid_argument, "robust_mean needs at least two images");
  require(clip_sigma > 0.0, ErrorCode::invalid_argument, "clip_sigma must be positive");
  require(iters >= 0, ErrorCode::invalid_argument, "iteration count must be non-negative");
  for (const auto& img : stack) require_same_shape(img.shape(), stack.front().shape(), "robust_mean");
  ImagePlanes<T> out(stack.front().shape());
  std::vector<double> vals(stack.size());
  std::vector<char> keep(stack.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < stack.size(); ++k) vals[k] = static_cast<double>(stack[k][i]);
    std::sort(vals.begin(), vals.end());
    std::fill(keep.begin(), keep.end(), 1);
    auto kept_mean = [&] {
      double sum = 0;
      int count = 0;
      for (std::size_t k = 0; k < vals.size(); ++k)
        if (keep[k]) sum += vals[k], ++count;
      return std::pair{sum / count, count};
    };
    for (int it = 0; it < iters; ++it) {
      const auto [mean, count] = kept_mean();
      double ss = 0;
      for (std::size_t k = 0; k < vals.size(); ++k)
        if (keep[k]) ss += (vals[k] - mean) * (vals[k] - mean);
      const double sd = std::sqrt(ss / count);
      if (sd == 0.0) break;
      bool changed = false;
      for (std::size_t k = 0; k < vals.size(); ++k)
        if (keep[k] && std::abs(vals[k] - mean) > clip_sigma * sd) keep[k] = 0, changed = true;
      if (!changed) break;
    }
    out[i] = static_cast<T>(kept_mean().first);
  }
  return out;
}

/// J - mu_m + mu_1.
template <class T>
ImagePlanes<T> intensity_align(ImagePlanes<T> j_m, double mu_m, double mu_1) {
  const double shift = mu_1 - mu_m;
  for (T& v : j_m.values()) v = static_cast<T>(v + shift);
  return j_m;
}

/// Central window covering `fraction` of each dimension (rounded).
template <class T>
ImagePlanes<T> center_crop(const ImagePlanes<T>& img, double fraction = 1.0) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::invalid_argument, "crop fraction must lie in (0,1]");
  const int h = std::max(1, static_cast<int>(std::lround(img.height() * fraction)));
  const int w = std::max(1, static_cast<int>(std::lround(img.width() * fraction)));
  const int y0 = (img.height() - h) / 2, x0 = (img.width() - w) / 2;
  ImagePlanes<T> out(Shape{img.batch(), img.channels(), h, w});
  for (int n = 0; n < img.batch(); ++n)
    for (int c = 0; c < img.channels(); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(n, c, y, x) = img(n, c, y0 + y, x0 + x);
  return out;
}

// ---------------------------------------------------------------------------
// Spatial alignment

/// Maps reference pixel coordinates to moving pixel coordinates (pixel
/// centres at integers): S(p) = scale * R(rotation) * p + (tx, ty).
struct SimilarityTransform {
  double scale = 1.0;
  double rotation = 0.0;  // radians
  double tx = 0.0;
  double ty = 0.0;

  std::pair<double, double> apply(double x, double y) const {
    const double a = scale * std::cos(rotation), b = scale * std::sin(rotation);
    return {a * x - b * y + tx, b * x + a * y + ty};
  }

  /// Similarity with the given scale and rotation about (cx, cy).
  static SimilarityTransform about(double cx, double cy, double scale, double rotation, double tx = 0,
                                   double ty = 0) {
    SimilarityTransform s{scale, rotation, 0, 0};
    const auto [px, py] = s.apply(cx, cy);
    s.tx = cx - px + tx;
    s.ty = cy - py + ty;
    return s;
  }
};

enum class AlignMethod { keypoints, phase_correlation, none };

inline std::string to_string(AlignMethod m) {
  switch (m) {
    case AlignMethod::keypoints: return "keypoints";
    case AlignMethod::phase_correlation: return "phase_correlation";
    case AlignMethod::none: return "none";
  }
  return "?";
}

template <class T>
struct AlignmentResult {
  ImagePlanes<T> warped;  // warped(p) = moving(S(p))
  SimilarityTransform transform;
  AlignMethod method = AlignMethod::none;
  bool success = false;
  int keypoints_moving = 0;
  int keypoints_reference = 0;
  int matches = 0;
  int inliers = 0;
  double residual_rms = 0.0;  // px, over inliers
  std::string diagnostics;
};

struct AlignOptions {
  int max_keypoints = 300;
  double corner_threshold = 0.003; // Harris response relative to the strongest corner
  int patch_radius = 4;           // descriptor is (2r+1)^2 samples
  double ratio = 0.8;             // nearest / second-nearest descriptor distance
  double inlier_threshold = 1.5;  // px
  int ransac_iterations = 1000;
  int min_inliers = 6;
  double min_phase_peak = 0.03;
  std::uint64_t seed = 0x72616e736163ULL;
};

namespace detail {

using Grid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Grid to_grid(const ImagePlanes<double>& y) {
  Grid g(y.height(), y.width());
  for (int r = 0; r < y.height(); ++r)
    for (int c = 0; c < y.width(); ++c) g(r, c) = y(0, 0, r, c);
  return g;
}

inline double sample_bilinear(const Grid& g, double y, double x) {
  const int h = static_cast<int>(g.rows()), w = static_cast<int>(g.cols());
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = std::min(static_cast<int>(y), std::max(h - 2, 0));
  const int x0 = std::min(static_cast<int>(x), std::max(w - 2, 0));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
}

inline Grid gaussian_blur(const Grid& g, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= sum;
  const int h = static_cast<int>(g.rows()), w = static_cast<int>(g.cols());
  Grid tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * g(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

struct Keypoint {
  double x = 0, y = 0, response = 0;
  std::vector<double> descriptor;
};

/// Harris corners with 5x5 non-maximum suppression and parabolic sub-pixel
/// refinement, described by zero-mean unit-norm upright patches.
inline std::vector<Keypoint> detect_keypoints(const Grid& smooth, const AlignOptions& opt) {
  const int h = static_cast<int>(smooth.rows()), w = static_cast<int>(smooth.cols());
  Grid ix(h, w), iy(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto at = [&](int yy, int xx) { return smooth(std::clamp(yy, 0, h - 1), std::clamp(xx, 0, w - 1)); };
      ix(y, x) = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2 * at(y, x - 1) -
                  at(y + 1, x - 1)) / 8.0;
      iy(y, x) = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2 * at(y - 1, x) -
                  at(y - 1, x + 1)) / 8.0;
    }
  const Grid sxx = gaussian_blur(ix * ix, 1.5), syy = gaussian_blur(iy * iy, 1.5), sxy = gaussian_blur(ix * iy, 1.5);
  const Grid resp = sxx * syy - sxy * sxy - 0.04 * (sxx + syy) * (sxx + syy);
  const double peak = resp.maxCoeff();
  std::vector<Keypoint> kps;
  if (!(peak > 0.0)) return kps;
  const int margin = opt.patch_radius + 3;
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x) {
      const double r = resp(y, x);
      if (r < opt.corner_threshold * peak) continue;
      bool is_max = true;
      for (int dy = -2; dy <= 2 && is_max; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const double o = resp(y + dy, x + dx);
          // Ties broken by scan order so plateaus yield one point.
          if (o > r || (o == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      auto refine = [](double m, double c, double p) {
        const double den = m - 2 * c + p;
        return den < 0 ? std::clamp(0.5 * (m - p) / den, -0.5, 0.5) : 0.0;
      };
      kps.push_back(Keypoint{x + refine(resp(y, x - 1), r, resp(y, x + 1)),
                             y + refine(resp(y - 1, x), r, resp(y + 1, x)), r, {}});
    }
  std::sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.response != b.response) return a.response > b.response;
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
  if (static_cast<int>(kps.size()) > opt.max_keypoints) kps.resize(static_cast<std::size_t>(opt.max_keypoints));

  const int r = opt.patch_radius;
  for (auto& k : kps) {
    auto& d = k.descriptor;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) d.push_back(sample_bilinear(smooth, k.y + dy, k.x + dx));
    double mean = 0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(d.size());
    double norm = 0;
    for (double& v : d) {
      v -= mean;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : d) v = norm > 0 ? v / norm : 0.0;
  }
  return kps;
}

struct Match {
  int moving = 0;
  int reference = 0;
};

/// Nearest neighbours under the ratio test, kept only when mutual.
inline std::vector<Match> match_descriptors(const std::vector<Keypoint>& mov, const std::vector<Keypoint>& ref,
                                            double ratio) {
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  auto nearest = [&](const Keypoint& q, const std::vector<Keypoint>& pool, double* second) {
    int best = -1;
    double d1 = INFINITY, d2 = INFINITY;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      const double d = dist(q.descriptor, pool[j].descriptor);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = static_cast<int>(j);
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (second) *second = d2;
    return std::pair{best, d1};
  };
  std::vector<Match> out;
  for (std::size_t i = 0; i < mov.size(); ++i) {
    double d2 = 0;
    const auto [j, d1] = nearest(mov[i], ref, &d2);
    if (j < 0 || !(d1 < ratio * ratio * d2)) continue;
    if (nearest(ref[static_cast<std::size_t>(j)], mov, nullptr).first != static_cast<int>(i)) continue;
    out.push_back(Match{static_cast<int>(i), j});
  }
  return out;
}

/// Least-squares similarity (a, b, tx, ty) mapping reference -> moving.
inline std::optional<SimilarityTransform> fit_similarity(const std::vector<Keypoint>& mov,
                                                         const std::vector<Keypoint>& ref,
                                                         const std::vector<Match>& matches,
                                                         const std::vector<int>& use) {
  if (use.size() < 2) return std::nullopt;
  Eigen::MatrixXd A(2 * use.size(), 4);
  Eigen::VectorXd rhs(2 * use.size());
  for (std::size_t k = 0; k < use.size(); ++k) {
    const auto& m = matches[static_cast<std::size_t>(use[k])];
    const auto& p = ref[static_cast<std::size_t>(m.reference)];
    const auto& q = mov[static_cast<std::size_t>(m.moving)];
    const auto r = static_cast<Eigen::Index>(2 * k);
    A.row(r) << p.x, -p.y, 1, 0;
    A.row(r + 1) << p.y, p.x, 0, 1;
    rhs(r) = q.x;
    rhs(r + 1) = q.y;
  }
  const Eigen::Vector4d sol = A.colPivHouseholderQr().solve(rhs);
  const double s = std::hypot(sol(0), sol(1));
  if (!(s > 1e-6) || !std::isfinite(s)) return std::nullopt;
  return SimilarityTransform{s, std::atan2(sol(1), sol(0)), sol(2), sol(3)};
}

inline double reprojection_error(const SimilarityTransform& s, const Keypoint& p, const Keypoint& q) {
  const auto [x, y] = s.apply(p.x, p.y);
  return std::hypot(x - q.x, y - q.y);
}

inline std::vector<std::complex<double>> fft2(const Grid& g, bool inverse,
                                              const std::vector<std::complex<double>>* input = nullptr) {
  const int h = static_cast<int>(g.rows()), w = static_cast<int>(g.cols());
  std::vector<std::complex<double>> data(static_cast<std::size_t>(h) * w);
  if (input) {
    data = *input;
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) data[static_cast<std::size_t>(y) * w + x] = g(y, x);
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> line, out;
  for (int y = 0; y < h; ++y) {
    line.assign(data.begin() + static_cast<std::ptrdiff_t>(y) * w, data.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
    inverse ? fft.inv(out, line) : fft.fwd(out, line);
    std::copy(out.begin(), out.end(), data.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  line.resize(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = data[static_cast<std::size_t>(y) * w + x];
    inverse ? fft.inv(out, line) : fft.fwd(out, line);
    for (int y = 0; y < h; ++y) data[static_cast<std::size_t>(y) * w + x] = out[static_cast<std::size_t>(y)];
  }
  return data;
}

/// Translation d with moving(p) ~ reference(p - d), and the correlation peak.
inline std::pair<std::pair<double, double>, double> phase_correlate(const Grid& mov, const Grid& ref) {
  const int h = static_cast<int>(ref.rows()), w = static_cast<int>(ref.cols());
  Grid win(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      win(y, x) = (0.5 - 0.5 * std::cos(2 * std::numbers::pi * (y + 0.5) / h)) *
                  (0.5 - 0.5 * std::cos(2 * std::numbers::pi * (x + 0.5) / w));
  const auto fm = fft2((mov - mov.mean()) * win, false);
  const auto fr = fft2((ref - ref.mean()) * win, false);
  std::vector<std::complex<double>> cross(fm.size());
  for (std::size_t i = 0; i < fm.size(); ++i) {
    const auto c = fm[i] * std::conj(fr[i]);
    const double mag = std::abs(c);
    cross[i] = mag > 1e-15 ? c / mag : std::complex<double>(0, 0);
  }
  const auto corr = fft2(ref, true, &cross);
  int by = 0, bx = 0;
  double best = -INFINITY;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (const double v = corr[static_cast<std::size_t>(y) * w + x].real(); v > best) best = v, by = y, bx = x;
  auto at = [&](int y, int x) { return corr[static_cast<std::size_t>((y + h) % h) * w + (x + w) % w].real(); };
  auto refine = [](double m, double c, double p) {
    const double den = m - 2 * c + p;
    return den < 0 ? std::clamp(0.5 * (m - p) / den, -0.5, 0.5) : 0.0;
  };
  double dy = by + refine(at(by - 1, bx), best, at(by + 1, bx));
  double dx = bx + refine(at(by, bx - 1), best, at(by, bx + 1));
  if (dy > h / 2.0) dy -= h;
  if (dx > w / 2.0) dx -= w;
  return {{dx, dy}, best};
}

}  // namespace detail

/// warped(p) = moving(S(p)), bilinear with edge replication.
template <class T>
ImagePlanes<T> warp_similarity(const ImagePlanes<T>& moving, const SimilarityTransform& s, int out_h = -1,
                               int out_w = -1) {
  if (out_h < 0) out_h = moving.height();
  if (out_w < 0) out_w = moving.width();
  ImagePlanes<T> out(Shape{moving.batch(), moving.channels(), out_h, out_w});
  for (int n = 0; n < moving.batch(); ++n)
    for (int c = 0; c < moving.channels(); ++c) {
      detail::Grid g(moving.height(), moving.width());
      for (int y = 0; y < moving.height(); ++y)
        for (int x = 0; x < moving.width(); ++x) g(y, x) = static_cast<double>(moving(n, c, y, x));
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
          const auto [sx, sy] = s.apply(x, y);
          out(n, c, y, x) = static_cast<T>(detail::sample_bilinear(g, sy, sx));
        }
    }
  return out;
}

/// Estimates S with warped(p) = moving(S(p)) ~ reference(p). Keypoint
/// matching with RANSAC consensus first; phase-correlation translation when
/// too few inliers survive. Failure is reported in the result, not thrown.
template <class T>
AlignmentResult<T> spatial_align(const ImagePlanes<T>& moving, const ImagePlanes<T>& reference,
                                 const AlignOptions& opt = {}) {
  require(moving.batch() == 1 && reference.batch() == 1, ErrorCode::shape_mismatch, "spatial_align takes one image each");
  require(moving.height() == reference.height() && moving.width() == reference.width(), ErrorCode::shape_mismatch,
          "spatial_align needs congruent images: " + moving.shape().str() + " vs " + reference.shape().str());
  const detail::Grid mov = detail::gaussian_blur(detail::to_grid(luma(moving)), 1.0);
  const detail::Grid ref = detail::gaussian_blur(detail::to_grid(luma(reference)), 1.0);

  AlignmentResult<T> res;
  const auto km = detail::detect_keypoints(mov, opt);
  const auto kr = detail::detect_keypoints(ref, opt);
  res.keypoints_moving = static_cast<int>(km.size());
  res.keypoints_reference = static_cast<int>(kr.size());
  const auto matches = detail::match_descriptors(km, kr, opt.ratio);
  res.matches = static_cast<int>(matches.size());

  std::vector<int> best_inliers;
  if (static_cast<int>(matches.size()) >= opt.min_inliers) {
    Rng rng = derive_stream(opt.seed, matches.size());
    const int n = static_cast<int>(matches.size());
    auto inliers_of = [&](const SimilarityTransform& s) {
      std::vector<int> in;
      for (int i = 0; i < n; ++i) {
        const auto& m = matches[static_cast<std::size_t>(i)];
        if (detail::reprojection_error(s, kr[static_cast<std::size_t>(m.reference)],
                                       km[static_cast<std::size_t>(m.moving)]) < opt.inlier_threshold)
          in.push_back(i);
      }
      return in;
    };
    for (int it = 0; it < opt.ransac_iterations; ++it) {
      const int a = draw_int(rng, 0, n - 1);
      int b = draw_int(rng, 0, n - 2);
      if (b >= a) ++b;
      const auto s = detail::fit_similarity(km, kr, matches, {a, b});
      if (!s) continue;
      auto in = inliers_of(*s);
      if (in.size() > best_inliers.size()) best_inliers = std::move(in);
    }
    for (int refit = 0; refit < 3 && best_inliers.size() >= 2; ++refit) {
      const auto s = detail::fit_similarity(km, kr, matches, best_inliers);
      if (!s) break;
      auto in = inliers_of(*s);
      if (in.size() < best_inliers.size()) break;
      best_inliers = std::move(in);
    }
  }

  if (static_cast<int>(best_inliers.size()) >= opt.min_inliers) {
    res.transform = *detail::fit_similarity(km, kr, matches, best_inliers);
    res.method = AlignMethod::keypoints;
    res.success = true;
    res.inliers = static_cast<int>(best_inliers.size());
    double ss = 0;
    for (int i : best_inliers) {
      const auto& m = matches[static_cast<std::size_t>(i)];
      const double e = detail::reprojection_error(res.transform, kr[static_cast<std::size_t>(m.reference)],
                                                  km[static_cast<std::size_t>(m.moving)]);
      ss += e * e;
    }
    res.residual_rms = std::sqrt(ss / static_cast<double>(best_inliers.size()));
  } else {
    const auto [shift, peak] = detail::phase_correlate(mov, ref);
    res.inliers = static_cast<int>(best_inliers.size());
    if (peak >= opt.min_phase_peak) {
      res.transform = SimilarityTransform{1.0, 0.0, shift.first, shift.second};
      res.method = AlignMethod::phase_correlation;
      res.success = true;
      res.diagnostics = "keypoint consensus too small (" + std::to_string(best_inliers.size()) + " inliers of " +
                        std::to_string(matches.size()) + " matches); phase correlation peak " + std::to_string(peak);
    } else {
      res.method = AlignMethod::none;
      res.diagnostics = "alignment failed: " + std::to_string(km.size()) + "/" + std::to_string(kr.size()) +
                        " keypoints, " + std::to_string(matches.size()) + " matches, " +
                        std::to_string(best_inliers.size()) + " inliers, phase correlation peak " +
                        std::to_string(peak);
    }
  }
  res.warped = res.success ? warp_similarity(moving, res.transform) : moving;
  return res;
}

// ---------------------------------------------------------------------------
// Ground-truth construction

struct GroundTruthOptions {
  double crop_fraction = 1.0;
  double clip_sigma = 2.5;
  int clip_iters = 3;
  IspParams isp{};
  AlignOptions align{};
};

template <class T>
struct GroundTruthResult {
  ImagePlanes<T> image;          // aligned, intensity-matched estimate
  ImagePlanes<T> robust_mean;    // before intensity and spatial alignment
  double mu_m = 0.0;
  AlignmentResult<T> alignment;
};

/// One zoom level: render every capture through the ISP, crop, take the
/// robust mean J_m, shift its mean intensity to mu_1 and align it to the
/// reference view.
template <class T>
GroundTruthResult<T> build_ground_truth(const std::vector<RawFrame<T>>& captures, const ImagePlanes<T>& reference,
                                        double mu_1, const GroundTruthOptions& opt = {}) {
  std::vector<ImagePlanes<T>> stack;
  stack.reserve(captures.size());
  for (const auto& raw : captures) stack.push_back(center_crop(f_isp(raw, opt.isp), opt.crop_fraction));
  GroundTruthResult<T> out;
  out.robust_mean = robust_mean(stack, opt.clip_sigma, opt.clip_iters);
  out.mu_m = mean_value(out.robust_mean);
  const auto shifted = intensity_align(out.robust_mean, out.mu_m, mu_1);
  out.alignment = spatial_align(shifted, reference, opt.align);
  out.image = out.alignment.warped;
  return out;
}

}  // namespace lldiff::data
