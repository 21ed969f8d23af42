#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "lldiff/imaging.hpp"
#include "lldiff/nn/unet.hpp"

namespace lldiff {

enum class CfaPattern {
  rggb,
  mono,  // no color filter array; single-plane sensor
};

/// Black-level-normalized sensor plane in [0,1].
template <class T>
struct RawFrame {
  ImagePlanes<T> data;  // [1, 1, H, W]
  CfaPattern pattern = CfaPattern::rggb;

  int height() const { return data.height(); }
  int width() const { return data.width(); }

  void validate() const {
    require(data.batch() == 1 && data.channels() == 1, ErrorCode::shape_mismatch, "raw frame must be one plane");
    if (pattern == CfaPattern::rggb)
      require(data.height() % 2 == 0 && data.width() % 2 == 0, ErrorCode::shape_mismatch,
              "Bayer frame dimensions must be even");
    for (T v : data.values())
      require(std::isfinite(static_cast<double>(v)) && v >= T(0) && v <= T(1), ErrorCode::out_of_range,
              "raw values must lie in [0,1]");
  }
};

/// Output of the condition mapper: a target-resolution image and, for the
/// learned Raw path, the effective gamma.
template <class T>
struct ConditionOutput {
  ImagePlanes<T> image;
  std::optional<double> gamma;
};

/// [1,1,H,W] RGGB mosaic -> [1,4,H/2,W/2] planes ordered R, G(row 0), G(row 1), B.
template <class T>
ImagePlanes<T> pack_bayer(const RawFrame<T>& raw) {
  require(raw.pattern == CfaPattern::rggb, ErrorCode::invalid_argument, "only RGGB mosaics can be packed");
  const auto& d = raw.data;
  require(d.batch() == 1 && d.channels() == 1, ErrorCode::shape_mismatch, "raw frame must be one plane");
  require(d.height() % 2 == 0 && d.width() % 2 == 0, ErrorCode::shape_mismatch,
          "Bayer frame dimensions must be even, got " + d.shape().str());
  const int h = d.height() / 2;
  const int w = d.width() / 2;
  ImagePlanes<T> out(Shape{1, 4, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      out(0, 0, y, x) = d(0, 0, 2 * y, 2 * x);
      out(0, 1, y, x) = d(0, 0, 2 * y, 2 * x + 1);
      out(0, 2, y, x) = d(0, 0, 2 * y + 1, 2 * x);
      out(0, 3, y, x) = d(0, 0, 2 * y + 1, 2 * x + 1);
    }
  return out;
}

template <class T>
RawFrame<T> unpack_bayer(const ImagePlanes<T>& packed) {
  require(packed.batch() == 1 && packed.channels() == 4, ErrorCode::shape_mismatch,
          "packed Bayer input must be [1,4,h,w]");
  RawFrame<T> raw{ImagePlanes<T>(Shape{1, 1, 2 * packed.height(), 2 * packed.width()}), CfaPattern::rggb};
  for (int y = 0; y < packed.height(); ++y)
    for (int x = 0; x < packed.width(); ++x) {
      raw.data(0, 0, 2 * y, 2 * x) = packed(0, 0, y, x);
      raw.data(0, 0, 2 * y, 2 * x + 1) = packed(0, 1, y, x);
      raw.data(0, 0, 2 * y + 1, 2 * x) = packed(0, 2, y, x);
      raw.data(0, 0, 2 * y + 1, 2 * x + 1) = packed(0, 3, y, x);
    }
  return raw;
}

/// Identity condition path: values untouched; bicubic resize when the
/// spatial size differs from the target.
template <class T>
ConditionOutput<T> pi_srgb(const ImagePlanes<T>& image, int target_h, int target_w, int expected_channels = 3) {
  require(image.channels() == expected_channels, ErrorCode::shape_mismatch,
          "sRGB condition must have " + std::to_string(expected_channels) + " channels, got " +
              std::to_string(image.channels()));
  return ConditionOutput<T>{bicubic_resize(image, target_h, target_w), std::nullopt};
}

struct PiConfig {
  int base_channels = 4;
  std::vector<int> channel_multipliers{1, 2};
  int upsample_factor = 2;  // target size / packed size, a power of two
  double initial_gamma = 2.2;
  int attention_heads = 1;
  int block_expansion = 2;

  void validate() const {
    require(base_channels > 0 && attention_heads > 0 && block_expansion > 0, ErrorCode::invalid_argument,
            "Raw mapper widths must be positive");
    require(upsample_factor >= 1 && (upsample_factor & (upsample_factor - 1)) == 0, ErrorCode::invalid_argument,
            "Raw mapper upsample factor must be a power of two");
    require(initial_gamma > 0.0, ErrorCode::invalid_argument, "initial gamma must be positive");
  }

  bool operator==(const PiConfig&) const = default;
};

/// Inverse of softplus, used to place the stored gamma parameter.
inline double softplus_inverse(double y) { return y > 20.0 ? y : std::log(std::expm1(y)); }

/// Raw (packed RGGB) -> sRGB mapper: U-Net trunk without time input,
/// learned x2 transposed-conv upsampling stages, 3x3 head, sigmoid, and a
/// learnable gamma curve as the final layer.
class PiArchitecture {
 public:
  explicit PiArchitecture(const PiConfig& config) {
    config.validate();
    body_ = nn::UNetBody(layout_, "pi",
                         nn::UNetSpec{4, config.base_channels, config.channel_multipliers, 0, config.attention_heads,
                                      config.block_expansion});
    const int ch = body_.out_channels();
    for (int f = config.upsample_factor, i = 0; f > 1; f /= 2, ++i)
      ups_.push_back(nn::ConvTranspose::make(layout_, "pi.upsample" + std::to_string(i), ch, ch, 4, 2, 1));
    head_ = nn::Conv::make(layout_, "pi.head", ch, 3, 3, 1, 1);
    gamma_ = layout_.add("pi.gamma", Shape{1, 1, 1, 1}, nn::Init::constant, softplus_inverse(config.initial_gamma));
  }

  const nn::ParamLayout& layout() const { return layout_; }
  std::size_t gamma_entry() const { return gamma_; }
  int spatial_divisor() const { return body_.spatial_divisor(); }

  template <class T>
  nn::Var operator()(nn::Tape<T>& tape, const nn::BoundParams<T>& p, nn::Var packed) const {
    nn::Var h = body_(tape, p, packed, std::nullopt);
    for (const auto& up : ups_) h = nn::gelu(tape, up(tape, p, h));
    h = nn::sigmoid(tape, head_(tape, p, h));
    return nn::gamma_curve(tape, h, p[gamma_]);
  }

 private:
  nn::ParamLayout layout_;
  nn::UNetBody body_;
  std::vector<nn::ConvTranspose> ups_;
  nn::Conv head_;
  std::size_t gamma_ = 0;
};

template <class T>
class PiModel {
 public:
  PiModel(PiConfig config, std::vector<T> parameters)
      : config_(std::move(config)), arch_(config_), params_(std::move(parameters)) {
    require(params_.size() == arch_.layout().total(), ErrorCode::format,
            "Raw mapper payload has " + std::to_string(params_.size()) + " parameters, config implies " +
                std::to_string(arch_.layout().total()));
  }

  static PiModel initialize(const PiConfig& config, std::uint64_t seed) {
    PiArchitecture arch(config);
    Rng rng = derive_stream(seed, 0x7069ULL);
    return PiModel(config, arch.layout().template initialize<T>(rng));
  }

  const PiConfig& config() const { return config_; }
  const nn::ParamLayout& layout() const { return arch_.layout(); }
  std::span<const T> parameters() const { return params_; }
  std::span<T> parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// softplus of the stored value; always positive.
  double gamma() const {
    return nn::softplus_value(static_cast<double>(params_[layout().entry(arch_.gamma_entry()).offset]));
  }

  void check_target(const Shape& packed, int target_h, int target_w) const {
    require(packed.c == 4, ErrorCode::shape_mismatch, "Raw mapper expects 4 packed channels");
    require(target_h >= packed.h && target_w >= packed.w, ErrorCode::invalid_argument,
            "target resolution smaller than the packed input");
    require(target_h == packed.h * config_.upsample_factor && target_w == packed.w * config_.upsample_factor,
            ErrorCode::shape_mismatch,
            "target " + std::to_string(target_h) + "x" + std::to_string(target_w) + " is not the configured x" +
                std::to_string(config_.upsample_factor) + " of the packed input");
  }

  nn::Var build(nn::Tape<T>& tape, const nn::BoundParams<T>& params, nn::Var packed, int target_h,
                int target_w) const {
    check_target(tape.value(packed).shape(), target_h, target_w);
    return arch_(tape, params, packed);
  }

 private:
  PiConfig config_;
  PiArchitecture arch_;
  std::vector<T> params_;
};

/// Learned Raw condition path: [N,4,h,w] packed planes -> [N,3,H,W] in [0,1].
template <class T>
ConditionOutput<T> pi_raw(const PiModel<T>& model, const ImagePlanes<T>& packed, int target_h, int target_w) {
  nn::Tape<T> tape(false);
  const auto bound = nn::bind<T>(tape, model.layout(), model.parameters(), false);
  const nn::Var out = model.build(tape, bound, tape.constant(packed), target_h, target_w);
  return ConditionOutput<T>{tape.value(out), model.gamma()};
}

}  // namespace lldiff
