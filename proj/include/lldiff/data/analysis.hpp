#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lldiff/data/manifest.hpp"
#include "lldiff/metrics.hpp"

namespace lldiff::data {

struct GradientHistogram {
  std::vector<double> probability;  // sums to 1
  double lo = -1.0;
  double hi = 1.0;

  int bins() const { return static_cast<int>(probability.size()); }
  double center(int b) const { return lo + (b + 0.5) * (hi - lo) / bins(); }
  int bin_of(double g) const {
    const int b = static_cast<int>(std::floor((g - lo) / (hi - lo) * bins()));
    return std::clamp(b, 0, bins() - 1);
  }

  double mean() const {
    double m = 0;
    for (int b = 0; b < bins(); ++b) m += probability[static_cast<std::size_t>(b)] * center(b);
    return m;
  }
  double stddev() const {
    const double m = mean();
    double v = 0;
    for (int b = 0; b < bins(); ++b) {
      const double d = center(b) - m;
      v += probability[static_cast<std::size_t>(b)] * d * d;
    }
    return std::sqrt(v);
  }
};

/// Horizontal and vertical forward differences of every channel, pooled and
/// histogrammed over [-1, 1] (values outside land in the end bins).
template <class T>
GradientHistogram gradient_histogram(const ImagePlanes<T>& img, int bins) {
  require(bins >= 2, ErrorCode::invalid_argument, "histogram needs at least 2 bins");
  GradientHistogram h{std::vector<double>(static_cast<std::size_t>(bins), 0.0)};
  double count = 0;
  auto add = [&](double g) {
    h.probability[static_cast<std::size_t>(h.bin_of(g))] += 1.0;
    count += 1.0;
  };
  for (int n = 0; n < img.batch(); ++n)
    for (int c = 0; c < img.channels(); ++c)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
          const double v = static_cast<double>(img(n, c, y, x));
          if (x + 1 < img.width()) add(static_cast<double>(img(n, c, y, x + 1)) - v);
          if (y + 1 < img.height()) add(static_cast<double>(img(n, c, y + 1, x)) - v);
        }
  require(count > 0, ErrorCode::invalid_argument, "image too small for gradients");
  for (double& p : h.probability) p /= count;
  return h;
}

struct DegradationRow {
  double ev = 0;
  int pairs = 0;
  double psnr = 0;  // means over pairs
  double ssim = 0;
};

struct StatsRow {
  double ev = 0;
  int images = 0;
  double mu = 0;     // 0-255 scale
  double sigma = 0;
};

/// Where intensity statistics are measured.
enum class StatsDomain {
  raw,   // linear sensor values; scales exactly with 2^ev
  srgb,  // display-referred 8-bit images
};

/// Mean PSNR-Y / SSIM-Y of each low-light sRGB against the scene's zoom-1
/// ground truth, per EV level (ascending). Scenes without a congruent zoom-1
/// pair are listed in `missing`.
inline std::vector<DegradationRow> degradation_report(const DatasetManifest& m, const std::filesystem::path& root,
                                                      const std::string& split = "all",
                                                      std::vector<std::string>* missing = nullptr) {
  std::map<double, DegradationRow> rows;
  for (const SceneRecord* r : m.split(split)) {
    const GroundTruthEntry* gt = nullptr;
    for (const auto& g : r->ground_truth)
      if (g.zoom == 1) gt = &g;
    if (gt == nullptr) {
      if (missing) missing->push_back(r->scene_id + ": no zoom-1 ground truth");
      continue;
    }
    const auto ref = io::read_png<double>(root / gt->srgb_path);
    for (const auto& e : r->low_light) {
      const auto img = load_low_light_srgb<double>(root, e);
      if (img.shape() != ref.shape()) {
        if (missing) missing->push_back(r->scene_id + ": low-light size differs from ground truth");
        continue;
      }
      auto& row = rows[e.ev];
      row.ev = e.ev;
      row.pairs += 1;
      row.psnr += psnr_y(img, ref);
      row.ssim += ssim_y(img, ref);
    }
  }
  std::vector<DegradationRow> out;
  for (auto& [ev, row] : rows) {
    row.psnr /= row.pairs;
    row.ssim /= row.pairs;
    out.push_back(row);
  }
  return out;
}

/// Pooled mean and population standard deviation of pixel values per EV
/// level (ascending), on the 0-255 scale.
inline std::vector<StatsRow> intensity_stats(const std::vector<std::pair<double, ImagePlanes<double>>>& images) {
  struct Acc {
    int images = 0;
    double n = 0, sum = 0, sq = 0;
  };
  std::map<double, Acc> acc;
  for (const auto& [ev, img] : images) {
    auto& a = acc[ev];
    a.images += 1;
    for (double v : img.values()) {
      a.n += 1;
      a.sum += 255.0 * v;
      a.sq += 255.0 * v * 255.0 * v;
    }
  }
  std::vector<StatsRow> out;
  for (const auto& [ev, a] : acc) {
    const double mu = a.sum / a.n;
    out.push_back(StatsRow{ev, a.images, mu, std::sqrt(std::max(0.0, a.sq / a.n - mu * mu))});
  }
  return out;
}

/// intensity_stats over the low-light captures of a split.
inline std::vector<StatsRow> stats_mu_sigma(const DatasetManifest& m, const std::filesystem::path& root,
                                            StatsDomain domain = StatsDomain::raw, const std::string& split = "all") {
  std::vector<std::pair<double, ImagePlanes<double>>> images;
  for (const SceneRecord* r : m.split(split))
    for (const auto& e : r->low_light)
      images.emplace_back(e.ev, domain == StatsDomain::raw ? load_raw<double>(root, m, e).data
                                                           : load_low_light_srgb<double>(root, e));
  return intensity_stats(images);
}

inline void write_degradation_csv(std::ostream& os, const std::vector<DegradationRow>& rows) {
  os << "ev,pairs,psnr,ssim\n";
  os.precision(10);
  for (const auto& r : rows) os << r.ev << ',' << r.pairs << ',' << r.psnr << ',' << r.ssim << '\n';
}

inline void write_stats_csv(std::ostream& os, const std::vector<StatsRow>& rows) {
  os << "ev,images,mu,sigma\n";
  os.precision(10);
  for (const auto& r : rows) os << r.ev << ',' << r.images << ',' << r.mu << ',' << r.sigma << '\n';
}

}  // namespace lldiff::data
