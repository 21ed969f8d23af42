#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lldiff/nn/layers.hpp"

namespace lldiff::nn {

struct UNetSpec {
  int in_channels = 3;
  int base_channels = 16;
  std::vector<int> multipliers{1, 2, 4};
  int time_dim = 0;  // 0: no time conditioning
  int heads = 1;
  int expansion = 2;
};

/// Encoder/decoder trunk shared by the denoiser and the Raw mapper. Each
/// stage is two ConvNeXt blocks plus a linear-attention block; stages are
/// joined by stride-2 4x4 convolutions on the way down and transposed
/// convolutions on the way up, with skip concatenation at every level.
/// Output has base_channels * multipliers[0] channels at input resolution.
class UNetBody {
 public:
  UNetBody() = default;
  UNetBody(ParamLayout& layout, const std::string& prefix, const UNetSpec& spec) : spec_(spec) {
    require(spec.in_channels > 0 && spec.base_channels > 0 && !spec.multipliers.empty(),
            ErrorCode::invalid_argument, "U-Net widths must be positive");
    for (std::size_t i = 0; i < spec.multipliers.size(); ++i) {
      require(spec.multipliers[i] > 0, ErrorCode::invalid_argument, "channel multipliers must be positive");
      if (i > 0)
        require(spec.multipliers[i] >= spec.multipliers[i - 1], ErrorCode::invalid_argument,
                "channel multipliers must be nondecreasing");
    }
    const int levels = static_cast<int>(spec.multipliers.size());
    int prev = spec.in_channels;
    for (int i = 0; i < levels; ++i) {
      const int ch = spec.base_channels * spec.multipliers[static_cast<std::size_t>(i)];
      const std::string name = prefix + ".down" + std::to_string(i);
      Stage st;
      st.first = ConvNextBlock::make(layout, name + ".block0", prev, ch, spec.time_dim, spec.expansion);
      st.second = ConvNextBlock::make(layout, name + ".block1", ch, ch, spec.time_dim, spec.expansion);
      st.attention = AttentionBlock::make(layout, name + ".attn", ch, spec.heads);
      if (i + 1 < levels) st.down = Conv::make(layout, name + ".resample", ch, ch, 4, 2, 1);
      down_.push_back(std::move(st));
      prev = ch;
    }
    mid_first_ = ConvNextBlock::make(layout, prefix + ".mid.block0", prev, prev, spec.time_dim, spec.expansion);
    mid_attention_ = AttentionBlock::make(layout, prefix + ".mid.attn", prev, spec.heads);
    mid_second_ = ConvNextBlock::make(layout, prefix + ".mid.block1", prev, prev, spec.time_dim, spec.expansion);
    for (int i = levels - 1; i >= 0; --i) {
      const int ch = spec.base_channels * spec.multipliers[static_cast<std::size_t>(i)];
      const std::string name = prefix + ".up" + std::to_string(i);
      Stage st;
      st.first = ConvNextBlock::make(layout, name + ".block0", prev + ch, ch, spec.time_dim, spec.expansion);
      st.second = ConvNextBlock::make(layout, name + ".block1", ch, ch, spec.time_dim, spec.expansion);
      st.attention = AttentionBlock::make(layout, name + ".attn", ch, spec.heads);
      if (i > 0) st.up = ConvTranspose::make(layout, name + ".resample", ch, ch, 4, 2, 1);
      up_.push_back(std::move(st));
      prev = ch;
    }
  }

  const UNetSpec& spec() const { return spec_; }
  int out_channels() const { return spec_.base_channels * spec_.multipliers.front(); }
  int spatial_divisor() const { return 1 << (spec_.multipliers.size() - 1); }

  template <class T>
  Var operator()(Tape<T>& tape, const BoundParams<T>& p, Var x, std::optional<Var> time_emb) const {
    const Shape s = tape.value(x).shape();
    require(s.c == spec_.in_channels, ErrorCode::shape_mismatch,
            "U-Net expects " + std::to_string(spec_.in_channels) + " input channels, got " + std::to_string(s.c));
    require(s.h % spatial_divisor() == 0 && s.w % spatial_divisor() == 0, ErrorCode::shape_mismatch,
            "spatial size must be divisible by " + std::to_string(spatial_divisor()));
    std::vector<Var> skips;
    Var h = x;
    for (const auto& st : down_) {
      h = st.first(tape, p, h, time_emb);
      h = st.second(tape, p, h, time_emb);
      h = st.attention(tape, p, h);
      skips.push_back(h);
      if (st.down) h = (*st.down)(tape, p, h);
    }
    h = mid_first_(tape, p, h, time_emb);
    h = mid_attention_(tape, p, h);
    h = mid_second_(tape, p, h, time_emb);
    for (const auto& st : up_) {
      const Var joined[2] = {h, skips.back()};
      skips.pop_back();
      h = concat<T>(tape, joined);
      h = st.first(tape, p, h, time_emb);
      h = st.second(tape, p, h, time_emb);
      h = st.attention(tape, p, h);
      if (st.up) h = (*st.up)(tape, p, h);
    }
    return h;
  }

 private:
  struct Stage {
    ConvNextBlock first;
    ConvNextBlock second;
    AttentionBlock attention;
    std::optional<Conv> down;
    std::optional<ConvTranspose> up;
  };

  UNetSpec spec_;
  std::vector<Stage> down_;
  ConvNextBlock mid_first_;
  AttentionBlock mid_attention_;
  ConvNextBlock mid_second_;
  std::vector<Stage> up_;
};

}  // namespace lldiff::nn
