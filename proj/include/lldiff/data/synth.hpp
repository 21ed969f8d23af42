#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "lldiff/core/rng.hpp"
#include "lldiff/imaging.hpp"
#include "lldiff/io/checksum.hpp"
#include "lldiff/io/quantize.hpp"
#include "lldiff/io/raw16.hpp"
#include "lldiff/raw_condition.hpp"

namespace lldiff::data {

// ---------------------------------------------------------------------------
// Procedural clean corpus

namespace detail {

struct Shape2d {
  int kind = 0;  // 0 ellipse, 1 rectangle, 2 stripe band
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0, freq = 0;
  std::array<double, 3> colour{};
};

inline double smoothstep_edge(double d, double width) { return std::clamp(0.5 - d / width, 0.0, 1.0); }

}  // namespace detail

/// Deterministic synthetic scene: a two-colour gradient background with a
/// handful of ellipses, rectangles and sinusoidal stripe bands, rendered
/// with 4x4 supersampling. Values are linear radiance in [0.05, 0.95].
inline ImagePlanes<double> toy_image(std::uint64_t seed, std::uint64_t index, int height, int width, int channels) {
  require(height > 0 && width > 0, ErrorCode::invalid_argument, "toy image size must be positive");
  require(channels == 1 || channels == 3, ErrorCode::invalid_argument, "toy images have 1 or 3 channels");
  Rng rng = derive_stream(seed, 0x746f79ULL + (index << 8));
  auto colour = [&] {
    std::array<double, 3> c{};
    const double base = draw_uniform(rng, 0.1, 0.9);
    for (auto& v : c) v = std::clamp(base + draw_uniform(rng, -0.25, 0.25), 0.05, 0.95);
    return c;
  };
  const auto bg0 = colour(), bg1 = colour();
  const double bg_angle = draw_uniform(rng, 0, 2 * std::numbers::pi);
  std::vector<detail::Shape2d> shapes(static_cast<std::size_t>(draw_int(rng, 3, 6)));
  for (auto& s : shapes) {
    s.kind = draw_int(rng, 0, 2);
    s.cx = draw_uniform(rng, 0.1, 0.9);
    s.cy = draw_uniform(rng, 0.1, 0.9);
    s.rx = draw_uniform(rng, 0.08, 0.3);
    s.ry = draw_uniform(rng, 0.08, 0.3);
    s.angle = draw_uniform(rng, 0, std::numbers::pi);
    s.freq = draw_uniform(rng, 2.0, 6.0);
    s.colour = colour();
  }

  constexpr int ss = 4;
  const double edge = 1.5 / std::max(height, width);
  ImagePlanes<double> out(Shape{1, channels, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      std::array<double, 3> acc{};
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double u = (x + (sx + 0.5) / ss) / width;
          const double v = (y + (sy + 0.5) / ss) / height;
          const double g = std::clamp(0.5 + (u - 0.5) * std::cos(bg_angle) + (v - 0.5) * std::sin(bg_angle), 0.0, 1.0);
          std::array<double, 3> px{};
          for (int k = 0; k < 3; ++k) px[k] = (1 - g) * bg0[k] + g * bg1[k];
          for (const auto& s : shapes) {
            const double ca = std::cos(s.angle), sa = std::sin(s.angle);
            const double du = u - s.cx, dv = v - s.cy;
            const double a = ca * du + sa * dv, b = -sa * du + ca * dv;
            double cover = 0;
            if (s.kind == 0) {
              const double r = std::hypot(a / s.rx, b / s.ry);
              cover = detail::smoothstep_edge((r - 1.0) * std::min(s.rx, s.ry), edge);
            } else if (s.kind == 1) {
              const double d = std::max(std::abs(a) - s.rx, std::abs(b) - s.ry);
              cover = detail::smoothstep_edge(d, edge);
            } else {
              const double band = detail::smoothstep_edge(std::abs(b) - s.ry, edge);
              cover = band * (0.5 + 0.5 * std::sin(2 * std::numbers::pi * s.freq * a / s.rx));
            }
            for (int k = 0; k < 3; ++k) px[k] = (1 - cover) * px[k] + cover * s.colour[k];
          }
          for (int k = 0; k < 3; ++k) acc[k] += px[k];
        }
      const double inv = 1.0 / (ss * ss);
      if (channels == 3) {
        for (int k = 0; k < 3; ++k) out(0, k, y, x) = acc[k] * inv;
      } else {
        out(0, 0, y, x) = (0.299 * acc[0] + 0.587 * acc[1] + 0.114 * acc[2]) * inv;
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Sensor model

/// Shot + read noise in normalized sensor units; ISO gain g = iso / 100
/// scales both terms.
struct SensorModel {
  double sigma_g = 0.04;
  double lambda_p = 0.001;
  bool noise = true;
  bool quantize = true;  // 14-bit Raw and 8-bit sRGB codes
  io::RawCoding coding{};
};

inline double iso_gain(int iso) { return iso / 100.0; }

/// Variance of the noise added to a pixel whose clean signal is s.
inline double noise_variance(double signal, int iso, const SensorModel& m) {
  const double g = iso_gain(iso);
  const double read = m.sigma_g * g;
  return m.lambda_p * std::max(signal, 0.0) * g + read * read;
}

/// Scale linear radiance by 2^ev.
template <class T>
ImagePlanes<T> expose(ImagePlanes<T> radiance, double ev) {
  const double k = std::exp2(ev);
  for (T& v : radiance.values()) v = static_cast<T>(v * k);
  return radiance;
}

/// Sample the colour filter array: RGGB needs 3 channels, mono needs 1.
template <class T>
RawFrame<T> mosaic(const ImagePlanes<T>& radiance, CfaPattern pattern) {
  require(radiance.batch() == 1, ErrorCode::shape_mismatch, "mosaic takes one image");
  RawFrame<T> raw{ImagePlanes<T>(Shape{1, 1, radiance.height(), radiance.width()}), pattern};
  if (pattern == CfaPattern::mono) {
    require(radiance.channels() == 1, ErrorCode::shape_mismatch, "mono sensor needs a 1-channel scene");
    raw.data = radiance;
    return raw;
  }
  require(radiance.channels() == 3, ErrorCode::shape_mismatch, "RGGB sensor needs a 3-channel scene");
  require(radiance.height() % 2 == 0 && radiance.width() % 2 == 0, ErrorCode::shape_mismatch,
          "RGGB mosaic needs even dimensions, got " + radiance.shape().str());
  for (int y = 0; y < radiance.height(); ++y)
    for (int x = 0; x < radiance.width(); ++x) {
      const int c = (y % 2) + (x % 2);  // R=0, G=1, B=2
      raw.data(0, 0, y, x) = radiance(0, c, y, x);
    }
  return raw;
}

/// Adds heteroscedastic Gaussian noise; no clamping (see digitize).
template <class T>
void add_sensor_noise(ImagePlanes<T>& plane, int iso, const SensorModel& m, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (T& v : plane.values()) {
    const double sd = std::sqrt(noise_variance(static_cast<double>(v), iso, m));
    v = static_cast<T>(v + sd * dist(rng));
  }
}

/// Clamp to the sensor range and, when enabled, round to the Raw code grid.
template <class T>
void digitize(ImagePlanes<T>& plane, const SensorModel& m) {
  for (T& v : plane.values()) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    v = static_cast<T>(m.quantize ? io::decode_raw(io::encode_raw(c, m.coding), m.coding) : c);
  }
}

// ---------------------------------------------------------------------------
// ISP

/// Bilinear demosaic by normalized convolution with the [1 2 1]^T [1 2 1]
/// kernel over each colour's sample sites. Measured sites keep their value;
/// linear ramps are reproduced exactly away from the border.
template <class T>
ImagePlanes<T> demosaic_bilinear(const RawFrame<T>& raw) {
  raw.validate();
  if (raw.pattern == CfaPattern::mono) return raw.data;
  const int h = raw.height(), w = raw.width();
  ImagePlanes<T> out(Shape{1, 3, h, w});
  auto colour_at = [](int y, int x) { return (y % 2) + (x % 2); };
  static constexpr double k[3] = {1.0, 2.0, 1.0};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int own = colour_at(y, x);
      for (int c = 0; c < 3; ++c) {
        if (c == own) {
          out(0, c, y, x) = raw.data(0, 0, y, x);
          continue;
        }
        double num = 0, den = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w || colour_at(yy, xx) != c) continue;
            const double wgt = k[dy + 1] * k[dx + 1];
            num += wgt * raw.data(0, 0, yy, xx);
            den += wgt;
          }
        out(0, c, y, x) = static_cast<T>(num / den);
      }
    }
  return out;
}

struct IspParams {
  std::array<double, 3> wb_gains{1.0, 1.0, 1.0};
  double gamma = 2.2;  // output = linear^(1/gamma)
};

/// Demosaic -> white balance -> clamp -> gamma. Mono frames use the green gain.
template <class T>
ImagePlanes<T> f_isp(const RawFrame<T>& raw, const IspParams& p = {}) {
  for (double g : p.wb_gains) require(g > 0.0, ErrorCode::invalid_argument, "white-balance gains must be positive");
  require(p.gamma > 0.0, ErrorCode::invalid_argument, "gamma must be positive");
  ImagePlanes<T> rgb = demosaic_bilinear(raw);
  const double inv_gamma = 1.0 / p.gamma;
  for (int c = 0; c < rgb.channels(); ++c) {
    const double gain = rgb.channels() == 1 ? p.wb_gains[1] : p.wb_gains[static_cast<std::size_t>(c)];
    for (T& v : rgb.plane(0, c)) v = static_cast<T>(std::pow(std::clamp(v * gain, 0.0, 1.0), inv_gamma));
  }
  return rgb;
}

/// 8-bit display code grid, round half to even.
template <class T>
void quantize_srgb8(ImagePlanes<T>& img) {
  for (T& v : img.values()) v = static_cast<T>(io::to_u8(static_cast<double>(v)) / 255.0);
}

/// Naive restoration: undo the display gamma, brighten by 2^-ev, clamp,
/// re-apply the gamma.
template <class T>
ImagePlanes<T> exposure_rescale(ImagePlanes<T> srgb, double ev, double gamma = 2.2) {
  const double k = std::exp2(-ev);
  for (T& v : srgb.values())
    v = static_cast<T>(std::pow(std::clamp(std::pow(std::max(static_cast<double>(v), 0.0), gamma) * k, 0.0, 1.0),
                                1.0 / gamma));
  return srgb;
}

// ---------------------------------------------------------------------------
// Scene synthesis

struct SynthParams {
  std::vector<double> ev_levels{-3.0};
  int iso = 800;
  std::vector<int> zooms{1};
  CfaPattern pattern = CfaPattern::rggb;
  SensorModel sensor{};
  IspParams isp{};

  int max_zoom() const { return *std::max_element(zooms.begin(), zooms.end()); }

  void validate() const {
    require(!ev_levels.empty(), ErrorCode::invalid_argument, "at least one EV level is required");
    for (double ev : ev_levels) {
      require(ev <= 0.0, ErrorCode::invalid_argument, "EV offset " + std::to_string(ev) + " > 0 (overexposure)");
      require(ev >= -6.0, ErrorCode::invalid_argument, "EV offset " + std::to_string(ev) + " below -6");
    }
    require(iso >= 800 && iso <= 12800, ErrorCode::invalid_argument,
            "ISO " + std::to_string(iso) + " outside 800..12800");
    require(!zooms.empty(), ErrorCode::invalid_argument, "at least one zoom is required");
    for (int z : zooms)
      require(z == 1 || z == 2 || z == 4, ErrorCode::invalid_argument, "zoom must be 1, 2 or 4");
    require(sensor.sigma_g >= 0.0 && sensor.lambda_p >= 0.0, ErrorCode::invalid_argument,
            "noise parameters must be non-negative");
  }
};

template <class T>
struct LowLightRender {
  double ev = 0;
  int iso = 0;
  RawFrame<T> raw;
  ImagePlanes<T> srgb;
};

template <class T>
struct GroundTruthRender {
  int zoom = 1;
  ImagePlanes<T> srgb;
};

template <class T>
struct SynthScene {
  std::vector<LowLightRender<T>> low_light;
  std::vector<GroundTruthRender<T>> ground_truth;
};

/// Stream for one scene, independent of generation order.
inline Rng scene_stream(std::uint64_t seed, const std::string& scene_id) {
  return derive_stream(seed, io::fnv1a(scene_id));
}

/// Low-light inputs are captured at the widest field of view, i.e. clean_hr
/// downscaled by the largest zoom. The ground truth at zoom z has z times
/// the input resolution (clean_hr downscaled by max_zoom / z), so zoom 1 is
/// pixel-aligned with the inputs.
template <class T>
SynthScene<T> synth_scene(const ImagePlanes<T>& clean_hr, const SynthParams& p, Rng& rng) {
  p.validate();
  require(clean_hr.batch() == 1, ErrorCode::shape_mismatch, "synth_scene takes one clean image");
  for (T v : clean_hr.values())
    require(std::isfinite(static_cast<double>(v)) && v >= T(0) && v <= T(1), ErrorCode::out_of_range,
            "clean image must be normalized to [0,1]");
  const int zmax = p.max_zoom();
  SynthScene<T> scene;

  auto render = [&](const ImagePlanes<T>& radiance, double ev, bool noisy) {
    RawFrame<T> raw = mosaic(expose(radiance, ev), p.pattern);
    if (noisy && p.sensor.noise) add_sensor_noise(raw.data, p.iso, p.sensor, rng);
    digitize(raw.data, p.sensor);
    ImagePlanes<T> srgb = f_isp(raw, p.isp);
    if (p.sensor.quantize) quantize_srgb8(srgb);
    return std::pair{std::move(raw), std::move(srgb)};
  };

  const ImagePlanes<T> input_radiance = area_downscale(clean_hr, zmax);
  for (double ev : p.ev_levels) {
    auto [raw, srgb] = render(input_radiance, ev, true);
    scene.low_light.push_back(LowLightRender<T>{ev, p.iso, std::move(raw), std::move(srgb)});
  }
  for (int z : p.zooms) {
    auto [raw, srgb] = render(area_downscale(clean_hr, zmax / z), 0.0, false);
    scene.ground_truth.push_back(GroundTruthRender<T>{z, std::move(srgb)});
  }
  return scene;
}

}  // namespace lldiff::data
