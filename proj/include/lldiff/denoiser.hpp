#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "lldiff/nn/time_embedding.hpp"
#include "lldiff/nn/unet.hpp"

namespace lldiff {

/// Input layout of the denoiser is channel-concatenated [x_t | cond | tmc];
/// every condition carries out_channels channels.
struct DenoiserConfig {
  int in_channels = 3;
  int out_channels = 1;
  int base_channels = 16;
  std::vector<int> channel_multipliers{1, 2, 4};
  int time_embed_dim = 32;
  bool tmc_enabled = true;
  int attention_heads = 1;
  int block_expansion = 2;
  int diffusion_steps = 50;

  static DenoiserConfig for_channels(int image_channels, bool tmc) {
    DenoiserConfig c;
    c.out_channels = image_channels;
    c.tmc_enabled = tmc;
    c.in_channels = image_channels * (tmc ? 3 : 2);
    return c;
  }

  void validate() const {
    require(out_channels > 0 && base_channels > 0 && time_embed_dim > 0 && attention_heads > 0 &&
                block_expansion > 0 && diffusion_steps > 0,
            ErrorCode::invalid_argument, "denoiser widths must be positive");
    require(time_embed_dim % 2 == 0, ErrorCode::invalid_argument, "time_embed_dim must be even");
    require(in_channels == out_channels * (tmc_enabled ? 3 : 2), ErrorCode::invalid_argument,
            "in_channels must equal out_channels * (2 + tmc)");
    require(!channel_multipliers.empty(), ErrorCode::invalid_argument, "need at least one stage");
    for (std::size_t i = 0; i < channel_multipliers.size(); ++i) {
      require(channel_multipliers[i] > 0, ErrorCode::invalid_argument, "multipliers must be positive");
      require(i == 0 || channel_multipliers[i] >= channel_multipliers[i - 1], ErrorCode::invalid_argument,
              "multipliers must be nondecreasing");
    }
    require((base_channels * channel_multipliers.front()) % attention_heads == 0, ErrorCode::invalid_argument,
            "attention heads must divide stage widths");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

/// Structure of the denoiser, derived from the config alone.
class DenoiserArchitecture {
 public:
  explicit DenoiserArchitecture(const DenoiserConfig& config) {
    config.validate();
    const int td = config.time_embed_dim;
    time_hidden_ = nn::Conv::make(layout_, "time_mlp.0", td, 4 * td, 1, 1, 0);
    time_out_ = nn::Conv::make(layout_, "time_mlp.1", 4 * td, td, 1, 1, 0);
    body_ = nn::UNetBody(layout_, "unet",
                         nn::UNetSpec{config.in_channels, config.base_channels, config.channel_multipliers, td,
                                      config.attention_heads, config.block_expansion});
    const int ch = body_.out_channels();
    final_block_ = nn::ConvNextBlock::make(layout_, "out.block", ch, ch, td, config.block_expansion);
    final_proj_ = nn::Conv::make(layout_, "out.proj", ch, config.out_channels, 1, 1, 0);
  }

  const nn::ParamLayout& layout() const { return layout_; }
  int spatial_divisor() const { return body_.spatial_divisor(); }

  template <class T>
  nn::Var operator()(nn::Tape<T>& tape, const nn::BoundParams<T>& p, nn::Var input, std::span<const int> steps,
                     int time_dim, int total_steps) const {
    const int n = tape.value(input).batch();
    require(static_cast<int>(steps.size()) == n, ErrorCode::shape_mismatch, "one time step per batch item");
    ImagePlanes<T> emb(Shape{n, time_dim, 1, 1});
    for (int i = 0; i < n; ++i) {
      const auto e = nn::time_embedding(steps[static_cast<std::size_t>(i)], time_dim, total_steps);
      for (int c = 0; c < time_dim; ++c) emb(i, c, 0, 0) = static_cast<T>(e[static_cast<std::size_t>(c)]);
    }
    nn::Var t = tape.constant(std::move(emb));
    t = time_out_(tape, p, nn::gelu(tape, time_hidden_(tape, p, t)));
    nn::Var h = body_(tape, p, input, t);
    h = final_block_(tape, p, h, t);
    return final_proj_(tape, p, h);
  }

 private:
  nn::ParamLayout layout_;
  nn::Conv time_hidden_;
  nn::Conv time_out_;
  nn::UNetBody body_;
  nn::ConvNextBlock final_block_;
  nn::Conv final_proj_;
};

/// The epsilon predictor: config plus a flat parameter vector.
template <class T>
class DenoiserModel {
 public:
  DenoiserModel(DenoiserConfig config, std::vector<T> parameters)
      : config_(std::move(config)), arch_(config_), params_(std::move(parameters)) {
    require(params_.size() == arch_.layout().total(), ErrorCode::format,
            "denoiser payload has " + std::to_string(params_.size()) + " parameters, config implies " +
                std::to_string(arch_.layout().total()));
    for (T v : params_) require(std::isfinite(static_cast<double>(v)), ErrorCode::non_finite, "non-finite parameter");
  }

  static DenoiserModel initialize(const DenoiserConfig& config, std::uint64_t seed) {
    DenoiserArchitecture arch(config);
    Rng rng = derive_stream(seed, 0x64656e6fULL);
    return DenoiserModel(config, arch.layout().template initialize<T>(rng));
  }

  const DenoiserConfig& config() const { return config_; }
  const nn::ParamLayout& layout() const { return arch_.layout(); }
  std::span<const T> parameters() const { return params_; }
  std::span<T> parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  bool uses_tmc() const { return config_.tmc_enabled; }
  int image_channels() const { return config_.out_channels; }
  int diffusion_steps() const { return config_.diffusion_steps; }

  /// Checks shapes and concatenates [x_t | cond | tmc] on the tape.
  nn::Var assemble_input(nn::Tape<T>& tape, nn::Var x_t, nn::Var cond, std::optional<nn::Var> tmc) const {
    const Shape xs = tape.value(x_t).shape();
    require(xs.c == config_.out_channels, ErrorCode::shape_mismatch,
            "x_t has " + std::to_string(xs.c) + " channels, model expects " + std::to_string(config_.out_channels));
    const Shape cs = tape.value(cond).shape();
    require(cs == xs, ErrorCode::shape_mismatch, "condition " + cs.str() + " not congruent with x_t " + xs.str());
    require(tmc.has_value() == config_.tmc_enabled, ErrorCode::invalid_argument,
            config_.tmc_enabled ? "model expects a time-melding condition" : "model was built without TMC input");
    if (tmc) {
      const Shape ts = tape.value(*tmc).shape();
      require(ts == xs, ErrorCode::shape_mismatch, "TMC " + ts.str() + " not congruent with x_t " + xs.str());
      const nn::Var parts[3] = {x_t, cond, *tmc};
      return nn::concat<T>(tape, parts);
    }
    const nn::Var parts[2] = {x_t, cond};
    return nn::concat<T>(tape, parts);
  }

  /// Graph form used by training; params must be bound from this model's layout.
  nn::Var build(nn::Tape<T>& tape, const nn::BoundParams<T>& params, nn::Var x_t, nn::Var cond,
                std::optional<nn::Var> tmc, std::span<const int> steps) const {
    for (int t : steps)
      require(t >= 1 && t <= config_.diffusion_steps, ErrorCode::out_of_range,
              "time step " + std::to_string(t) + " outside 1.." + std::to_string(config_.diffusion_steps));
    const nn::Var input = assemble_input(tape, x_t, cond, tmc);
    return arch_(tape, params, input, steps, config_.time_embed_dim, config_.diffusion_steps);
  }

  /// eps_hat for a batch with per-item steps.
  ImagePlanes<T> forward(const ImagePlanes<T>& x_t, const ImagePlanes<T>& cond, const ImagePlanes<T>* tmc,
                         std::span<const int> steps) const {
    nn::Tape<T> tape(false);
    const auto bound = nn::bind<T>(tape, layout(), params_, false);
    const nn::Var xv = tape.constant(x_t);
    const nn::Var cv = tape.constant(cond);
    std::optional<nn::Var> tv;
    if (tmc != nullptr) tv = tape.constant(*tmc);
    return tape.value(build(tape, bound, xv, cv, tv, steps));
  }

  ImagePlanes<T> predict_eps(const ImagePlanes<T>& x_t, const ImagePlanes<T>& cond, const ImagePlanes<T>* tmc,
                             int t) const {
    const std::vector<int> steps(static_cast<std::size_t>(x_t.batch()), t);
    return forward(x_t, cond, tmc, steps);
  }

 private:
  DenoiserConfig config_;
  DenoiserArchitecture arch_;
  std::vector<T> params_;
};

}  // namespace lldiff
